"""Disentangled graph-convolutional recommender.

Every node carries two representation paths: a domain-specific path fed
only by same-domain neighbors, and a domain-shared path aggregating
neighbors across all domains. After L conv layers the paths fuse into
per-domain output embeddings; user/item affinity is a dot product.

Both the forward pass and the exact reverse-mode backward pass are
spelled out here by hand; no autograd is involved anywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import Direction, HeteroGraph
from .numeric import check_finite, relu, relu_backward

MODES = ("full", "specific_only", "shared_only")

# checkpoint kind ids; 3 is the matrix-factorization baseline
KIND_BY_MODE = {"full": 0, "specific_only": 1, "shared_only": 2}
MODE_BY_KIND = {v: k for k, v in KIND_BY_MODE.items()}
MF_KIND = 3

CHECKPOINT_MAGIC = b"DGM1"


def score(o_u_row, o_i_row) -> float:
    """Dot-product affinity between one user row and one item row."""
    a = np.asarray(o_u_row, dtype=np.float64)
    b = np.asarray(o_i_row, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"score expects equal-length rows, got {a.shape} and {b.shape}")
    return float(a @ b)


def score_pairs(o_u, o_i, users, items) -> np.ndarray:
    """Row-wise dots o_u[users[k]] . o_i[items[k]]."""
    return np.einsum("ij,ij->i", o_u[np.asarray(users)], o_i[np.asarray(items)])


def init_params(seed: int, shapes) -> dict:
    """Uniform init drawn in the given order from one seeded generator.

    Embedding tables use a = 1/sqrt(K); transform matrices use the
    fan-based bound b = sqrt(6 / (K + K)).
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes:
        k = shape[1]
        if name == "user_emb" or name.startswith("user_emb/") or name.startswith("item_emb"):
            bound = 1.0 / np.sqrt(k)
        else:
            bound = np.sqrt(6.0 / (k + k))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class Activations:
    """Forward-pass caches needed by the backward pass.

    Layer lists have layers+1 entries for representations (index 0 is
    the embedding) and layers entries for pre-activations and cached
    neighbor aggregates. Absent paths hold None.
    """

    h_u: list = None     # [d][l] user reps, specific path
    h_i: list = None     # [d][l] item reps, specific path
    g_u: list = None     # [l] user reps, shared path
    g_i: list = None     # [d][l] item reps, shared path
    pre_hu: list = None  # [d][l]
    pre_hi: list = None  # [d][l]
    pre_gu: list = None  # [l]
    pre_gi: list = None  # [d][l]
    agg_hu: list = None  # [d][l] item->user sums feeding the specific user update
    agg_hi: list = None  # [d][l] user->item sums feeding the specific item update
    agg_gu: list = None  # [d][l] item->user sums feeding the shared user update
    agg_gi: list = None  # [d][l] user->item sums feeding the shared item update
    s_u: list = field(default_factory=list)  # [d] fused user rep before output transform
    o_u: list = field(default_factory=list)  # [d] user outputs
    o_i: list = field(default_factory=list)  # [d] item outputs


class DisentangledGraphModel:
    """Two-path graph conv model over a frozen HeteroGraph.

    mode selects which paths exist: "full" (both), "specific_only"
    (per-domain path alone), "shared_only" (cross-domain path alone).
    tie_relation_weights reuses the specific-path IU/UI matrices inside
    the shared aggregation instead of separate ones; it therefore
    requires mode="full".
    """

    def __init__(self, graph: HeteroGraph, dim: int = 128, layers: int = 2,
                 mode: str = "full", tie_relation_weights: bool = False,
                 mean_aggregation: bool = False, seed: int = 0, params: dict = None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if dim <= 0:
            raise ValueError("dim must be positive")
        if layers < 1:
            raise ValueError("need at least one conv layer")
        if tie_relation_weights and mode != "full":
            raise ValueError("tie_relation_weights requires mode='full' "
                             "(tied matrices live on the specific path)")
        self.graph = graph
        self.dim = dim
        self.layers = layers
        self.mode = mode
        self.tie_relation_weights = tie_relation_weights
        self.mean_aggregation = mean_aggregation
        if params is None:
            params = init_params(seed, self.param_shapes())
        self._validate_params(params)
        self.params = params

    # -- parameter layout -------------------------------------------------

    @property
    def has_specific(self) -> bool:
        return self.mode in ("full", "specific_only")

    @property
    def has_shared(self) -> bool:
        return self.mode in ("full", "shared_only")

    def param_shapes(self):
        """Canonical (name, shape) list; serialization and init follow it."""
        g, k = self.graph, self.dim
        shapes = [("user_emb", (g.num_users, k))]
        for d in range(g.num_domains):
            shapes.append((f"item_emb/d{d}", (g.num_items_per_domain[d], k)))
        for l in range(self.layers):
            if self.has_specific:
                for d in range(g.num_domains):
                    for rel in ("uu", "iu", "ii", "ui"):
                        shapes.append((f"spec_{rel}/l{l}/d{d}", (k, k)))
            if self.has_shared:
                shapes.append((f"shared_uu/l{l}", (k, k)))
                shapes.append((f"shared_ii/l{l}", (k, k)))
                if not self.tie_relation_weights:
                    for d in range(g.num_domains):
                        shapes.append((f"shared_iu/l{l}/d{d}", (k, k)))
                        shapes.append((f"shared_ui/l{l}/d{d}", (k, k)))
        for d in range(g.num_domains):
            shapes.append((f"out/d{d}", (k, k)))
        return shapes

    def _validate_params(self, params: dict) -> None:
        expected = self.param_shapes()
        names = [n for n, _ in expected]
        if list(params.keys()) != names:
            missing = set(names) - set(params)
            extra = set(params) - set(names)
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, shape in expected:
            if params[name].shape != shape:
                raise ValueError(f"param {name}: shape {params[name].shape}, want {shape}")

    def _sh_iu(self, l: int, d: int) -> np.ndarray:
        if self.tie_relation_weights:
            return self.params[f"spec_iu/l{l}/d{d}"]
        return self.params[f"shared_iu/l{l}/d{d}"]

    def _sh_ui(self, l: int, d: int) -> np.ndarray:
        if self.tie_relation_weights:
            return self.params[f"spec_ui/l{l}/d{d}"]
        return self.params[f"shared_ui/l{l}/d{d}"]

    def _sh_iu_name(self, l: int, d: int) -> str:
        return (f"spec_iu/l{l}/d{d}" if self.tie_relation_weights
                else f"shared_iu/l{l}/d{d}")

    def _sh_ui_name(self, l: int, d: int) -> str:
        return (f"spec_ui/l{l}/d{d}" if self.tie_relation_weights
                else f"shared_ui/l{l}/d{d}")

    def _agg(self, d: int, direction: Direction):
        return self.graph.aggregator(d, direction, self.mean_aggregation)

    # -- forward -----------------------------------------------------------

    def forward(self) -> Activations:
        """Full-graph forward pass over every domain; caches everything
        the backward pass needs."""
        g, P, L, D = self.graph, self.params, self.layers, self.graph.num_domains
        acts = Activations()
        user_emb = P["user_emb"]
        item_emb = [P[f"item_emb/d{d}"] for d in range(D)]

        if self.has_specific:
            acts.h_u = [[user_emb] for _ in range(D)]
            acts.h_i = [[item_emb[d]] for d in range(D)]
            acts.pre_hu = [[] for _ in range(D)]
            acts.pre_hi = [[] for _ in range(D)]
            acts.agg_hu = [[] for _ in range(D)]
            acts.agg_hi = [[] for _ in range(D)]
        if self.has_shared:
            acts.g_u = [user_emb]
            acts.g_i = [[item_emb[d]] for d in range(D)]
            acts.pre_gu = []
            acts.pre_gi = [[] for _ in range(D)]
            acts.agg_gu = [[] for _ in range(D)]
            acts.agg_gi = [[] for _ in range(D)]

        for l in range(L):
            if self.has_specific:
                for d in range(D):
                    # domain-specific conv: self transform + same-domain
                    # neighbor sum, each through its own relation matrix
                    agg_u = self._agg(d, Direction.ITEM_TO_USER).apply(acts.h_i[d][l])
                    pre_u = (acts.h_u[d][l] @ P[f"spec_uu/l{l}/d{d}"]
                             + agg_u @ P[f"spec_iu/l{l}/d{d}"])
                    agg_i = self._agg(d, Direction.USER_TO_ITEM).apply(acts.h_u[d][l])
                    pre_i = (acts.h_i[d][l] @ P[f"spec_ii/l{l}/d{d}"]
                             + agg_i @ P[f"spec_ui/l{l}/d{d}"])
                    acts.agg_hu[d].append(agg_u)
                    acts.agg_hi[d].append(agg_i)
                    acts.pre_hu[d].append(pre_u)
                    acts.pre_hi[d].append(pre_i)
                    acts.h_u[d].append(relu(pre_u))
                    acts.h_i[d].append(relu(pre_i))
            if self.has_shared:
                # shared user conv sums neighbor messages over all domains
                # in ascending domain order
                pre_u = acts.g_u[l] @ P[f"shared_uu/l{l}"]
                for d in range(D):
                    agg = self._agg(d, Direction.ITEM_TO_USER).apply(acts.g_i[d][l])
                    acts.agg_gu[d].append(agg)
                    pre_u = pre_u + agg @ self._sh_iu(l, d)
                acts.pre_gu.append(pre_u)
                acts.g_u.append(relu(pre_u))
                for d in range(D):
                    # an item only has neighbors in its own domain, so the
                    # cross-domain sum collapses to one term
                    agg = self._agg(d, Direction.USER_TO_ITEM).apply(acts.g_u[l])
                    acts.agg_gi[d].append(agg)
                    pre_i = acts.g_i[d][l] @ P[f"shared_ii/l{l}"] + agg @ self._sh_ui(l, d)
                    acts.pre_gi[d].append(pre_i)
                    acts.g_i[d].append(relu(pre_i))

        for d in range(D):
            if self.mode == "full":
                s_u = acts.h_u[d][L] + acts.g_u[L]
                o_i = acts.h_i[d][L] + acts.g_i[d][L]
            elif self.mode == "specific_only":
                s_u = acts.h_u[d][L]
                o_i = acts.h_i[d][L]
            else:
                s_u = acts.g_u[L]
                o_i = acts.g_i[d][L]
            acts.s_u.append(s_u)
            acts.o_u.append(s_u @ P[f"out/d{d}"])
            acts.o_i.append(o_i)
        return acts

    def outputs(self):
        """(o_u, o_i) lists without keeping the caches."""
        acts = self.forward()
        return acts.o_u, acts.o_i

    # -- backward ----------------------------------------------------------

    def backward(self, acts: Activations, do_u: list, do_i: list) -> dict:
        """Exact gradients of a scalar objective w.r.t. every parameter.

        do_u[d]/do_i[d] are the objective's gradients at the fused
        outputs. Shared-path weight gradients accumulate across domains
        in ascending order; neighbor gradients scatter through the
        transposed CSR.
        """
        g, P, L, D = self.graph, self.params, self.layers, self.graph.num_domains
        if acts.o_u is None or len(acts.o_u) != D:
            raise ValueError("activations do not match this model")
        for d in range(D):
            if do_u[d].shape != acts.o_u[d].shape or do_i[d].shape != acts.o_i[d].shape:
                raise ValueError(f"upstream gradient shape mismatch in domain {d}")

        grads = {name: np.zeros(shape) for name, shape in self.param_shapes()}
        if self.has_specific:
            dh_u = [[np.zeros_like(acts.h_u[d][l]) for l in range(L + 1)] for d in range(D)]
            dh_i = [[np.zeros_like(acts.h_i[d][l]) for l in range(L + 1)] for d in range(D)]
        if self.has_shared:
            dg_u = [np.zeros_like(acts.g_u[l]) for l in range(L + 1)]
            dg_i = [[np.zeros_like(acts.g_i[d][l]) for l in range(L + 1)] for d in range(D)]

        for d in range(D):
            grads[f"out/d{d}"] += acts.s_u[d].T @ do_u[d]
            ds = do_u[d] @ P[f"out/d{d}"].T
            if self.has_specific:
                dh_u[d][L] += ds
                dh_i[d][L] += do_i[d]
            if self.has_shared:
                dg_u[L] += ds
                dg_i[d][L] += do_i[d]

        for l in reversed(range(L)):
            if self.has_specific:
                for d in range(D):
                    dpre = relu_backward(acts.pre_hu[d][l], dh_u[d][l + 1])
                    grads[f"spec_uu/l{l}/d{d}"] += acts.h_u[d][l].T @ dpre
                    dh_u[d][l] += dpre @ P[f"spec_uu/l{l}/d{d}"].T
                    grads[f"spec_iu/l{l}/d{d}"] += acts.agg_hu[d][l].T @ dpre
                    dh_i[d][l] += self._agg(d, Direction.ITEM_TO_USER).apply_transpose(
                        dpre @ P[f"spec_iu/l{l}/d{d}"].T)

                    dpre = relu_backward(acts.pre_hi[d][l], dh_i[d][l + 1])
                    grads[f"spec_ii/l{l}/d{d}"] += acts.h_i[d][l].T @ dpre
                    dh_i[d][l] += dpre @ P[f"spec_ii/l{l}/d{d}"].T
                    grads[f"spec_ui/l{l}/d{d}"] += acts.agg_hi[d][l].T @ dpre
                    dh_u[d][l] += self._agg(d, Direction.USER_TO_ITEM).apply_transpose(
                        dpre @ P[f"spec_ui/l{l}/d{d}"].T)
            if self.has_shared:
                dpre_u = relu_backward(acts.pre_gu[l], dg_u[l + 1])
                grads[f"shared_uu/l{l}"] += acts.g_u[l].T @ dpre_u
                dg_u[l] += dpre_u @ P[f"shared_uu/l{l}"].T
                for d in range(D):
                    grads[self._sh_iu_name(l, d)] += acts.agg_gu[d][l].T @ dpre_u
                    dg_i[d][l] += self._agg(d, Direction.ITEM_TO_USER).apply_transpose(
                        dpre_u @ self._sh_iu(l, d).T)
                for d in range(D):
                    dpre_i = relu_backward(acts.pre_gi[d][l], dg_i[d][l + 1])
                    grads[f"shared_ii/l{l}"] += acts.g_i[d][l].T @ dpre_i
                    dg_i[d][l] += dpre_i @ P[f"shared_ii/l{l}"].T
                    grads[self._sh_ui_name(l, d)] += acts.agg_gi[d][l].T @ dpre_i
                    dg_u[l] += self._agg(d, Direction.USER_TO_ITEM).apply_transpose(
                        dpre_i @ self._sh_ui(l, d).T)

        # layer 0 representations are the embedding tables themselves
        if self.has_specific:
            for d in range(D):
                grads["user_emb"] += dh_u[d][0]
                grads[f"item_emb/d{d}"] += dh_i[d][0]
        if self.has_shared:
            grads["user_emb"] += dg_u[0]
            for d in range(D):
                grads[f"item_emb/d{d}"] += dg_i[d][0]
        return grads


# -- checkpoint serialization ----------------------------------------------


def _model_header(model):
    if hasattr(model, "mode"):
        kind = KIND_BY_MODE[model.mode]
        layers = model.layers
        flags = (1 if model.tie_relation_weights else 0) | (2 if model.mean_aggregation else 0)
    else:
        kind = MF_KIND
        layers = 0
        flags = 0
    return kind, layers, flags


def save_checkpoint(model, path: str) -> None:
    """Write magic, config block, then every matrix in canonical order
    as little-endian float64."""
    g = model.graph
    kind, layers, flags = _model_header(model)
    shapes = model.param_shapes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", kind, g.num_domains))
        fh.write(struct.pack("<I", g.num_users))
        fh.write(struct.pack(f"<{g.num_domains}I", *g.num_items_per_domain))
        fh.write(struct.pack("<IIII", model.dim, layers, flags, len(shapes)))
        for name, shape in shapes:
            arr = model.params[name]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", *shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str, graph: HeteroGraph):
    """Read a checkpoint and rebuild the matching model over ``graph``.

    Validates magic, node counts against the graph, the canonical
    parameter order, shapes, and finiteness.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError(f"{path}: truncated checkpoint")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    kind, num_domains = struct.unpack("<II", take(8))
    num_users = struct.unpack("<I", take(4))[0]
    items = list(struct.unpack(f"<{num_domains}I", take(4 * num_domains)))
    dim, layers, flags, n_params = struct.unpack("<IIII", take(16))

    if num_domains != graph.num_domains or num_users != graph.num_users \
            or items != graph.num_items_per_domain:
        raise ValueError(f"{path}: checkpoint node counts do not match the graph")

    params = {}
    for _ in range(n_params):
        name_len = struct.unpack("<H", take(2))[0]
        name = take(name_len).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        data = np.frombuffer(take(8 * rows * cols), dtype="<f8")
        params[name] = check_finite(data.reshape(rows, cols).copy(), name)
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after checkpoint")

    if kind == MF_KIND:
        from .baselines import MfModel
        return MfModel(graph, dim=dim, params=params)
    if kind not in MODE_BY_KIND:
        raise ValueError(f"{path}: unknown checkpoint kind {kind}")
    return DisentangledGraphModel(
        graph, dim=dim, layers=layers, mode=MODE_BY_KIND[kind],
        tie_relation_weights=bool(flags & 1), mean_aggregation=bool(flags & 2),
        params=params)
