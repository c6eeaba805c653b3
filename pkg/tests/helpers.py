"""Shared test fixtures: a deliberately naive nested-loop forward pass
used as the oracle for the vectorized model, plus small graph builders.

The oracle walks node by node and transforms each neighbor vector before
summing, the opposite evaluation order from the implementation under
test, so agreement is meaningful.
"""

import numpy as np

from crossrec.data import Interaction, InteractionLog
from crossrec.graph import Direction, RelationId, build_graph


def make_log(edges, num_users, items_per_domain):
    """edges: list of (user, item, domain) tuples."""
    return InteractionLog(
        interactions=[Interaction(u, i, d, k) for k, (u, i, d) in enumerate(edges)],
        user_names=[f"u{n}" for n in range(num_users)],
        item_names=[[f"i{n}" for n in range(c)] for c in items_per_domain],
        domain_names=[f"d{n}" for n in range(len(items_per_domain))],
    )


def random_graph(rng, num_users, items_per_domain, num_edges):
    """Random simple bipartite multi-domain graph; every domain gets at
    least one edge."""
    seen = set()
    edges = []
    for d in range(len(items_per_domain)):
        u = int(rng.integers(num_users))
        i = int(rng.integers(items_per_domain[d]))
        seen.add((u, i, d))
        edges.append((u, i, d))
    while len(edges) < num_edges:
        d = int(rng.integers(len(items_per_domain)))
        u = int(rng.integers(num_users))
        i = int(rng.integers(items_per_domain[d]))
        if (u, i, d) not in seen:
            seen.add((u, i, d))
            edges.append((u, i, d))
    log = make_log(edges, num_users, list(items_per_domain))
    return build_graph(log), log


def oracle_forward(graph, params, layers, mode="full", tie=False, mean=False):
    """Per-node recomputation of the conv update rules. Returns
    (o_u, o_i) lists of dense arrays."""
    D = graph.num_domains
    U = graph.num_users
    counts = graph.num_items_per_domain
    has_spec = mode in ("full", "specific_only")
    has_shared = mode in ("full", "shared_only")

    def rl(v):
        return np.maximum(v, 0.0)

    def sh_iu(l, d):
        return params[f"spec_iu/l{l}/d{d}"] if tie else params[f"shared_iu/l{l}/d{d}"]

    def sh_ui(l, d):
        return params[f"spec_ui/l{l}/d{d}"] if tie else params[f"shared_ui/l{l}/d{d}"]

    def user_items(d, u):
        return graph.neighbors(RelationId(d, Direction.ITEM_TO_USER), u)

    def item_users(d, i):
        return graph.neighbors(RelationId(d, Direction.USER_TO_ITEM), i)

    hu = {(d, u): params["user_emb"][u] for d in range(D) for u in range(U)}
    hi = {(d, i): params[f"item_emb/d{d}"][i] for d in range(D) for i in range(counts[d])}
    gu = {u: params["user_emb"][u] for u in range(U)}
    gi = {(d, i): params[f"item_emb/d{d}"][i] for d in range(D) for i in range(counts[d])}

    for l in range(layers):
        if has_spec:
            new_hu, new_hi = {}, {}
            for d in range(D):
                for u in range(U):
                    nbrs = user_items(d, u)
                    w = 1.0 / len(nbrs) if (mean and len(nbrs)) else 1.0
                    pre = hu[(d, u)] @ params[f"spec_uu/l{l}/d{d}"]
                    for i in nbrs:
                        pre = pre + w * (hi[(d, int(i))] @ params[f"spec_iu/l{l}/d{d}"])
                    new_hu[(d, u)] = rl(pre)
                for i in range(counts[d]):
                    nbrs = item_users(d, i)
                    w = 1.0 / len(nbrs) if (mean and len(nbrs)) else 1.0
                    pre = hi[(d, i)] @ params[f"spec_ii/l{l}/d{d}"]
                    for u in nbrs:
                        pre = pre + w * (hu[(d, int(u))] @ params[f"spec_ui/l{l}/d{d}"])
                    new_hi[(d, i)] = rl(pre)
            hu, hi = new_hu, new_hi
        if has_shared:
            new_gu, new_gi = {}, {}
            for u in range(U):
                pre = gu[u] @ params[f"shared_uu/l{l}"]
                for d in range(D):
                    nbrs = user_items(d, u)
                    w = 1.0 / len(nbrs) if (mean and len(nbrs)) else 1.0
                    for i in nbrs:
                        pre = pre + w * (gi[(d, int(i))] @ sh_iu(l, d))
                new_gu[u] = rl(pre)
            for d in range(D):
                for i in range(counts[d]):
                    nbrs = item_users(d, i)
                    w = 1.0 / len(nbrs) if (mean and len(nbrs)) else 1.0
                    pre = gi[(d, i)] @ params[f"shared_ii/l{l}"]
                    for u in nbrs:
                        pre = pre + w * (gu[int(u)] @ sh_ui(l, d))
                    new_gi[(d, i)] = rl(pre)
            gu, gi = new_gu, new_gi

    o_u, o_i = [], []
    for d in range(D):
        rows_u, rows_i = [], []
        for u in range(U):
            if mode == "full":
                fused = hu[(d, u)] + gu[u]
            elif mode == "specific_only":
                fused = hu[(d, u)]
            else:
                fused = gu[u]
            rows_u.append(fused @ params[f"out/d{d}"])
        for i in range(counts[d]):
            if mode == "full":
                rows_i.append(hi[(d, i)] + gi[(d, i)])
            elif mode == "specific_only":
                rows_i.append(hi[(d, i)])
            else:
                rows_i.append(gi[(d, i)])
        o_u.append(np.array(rows_u))
        o_i.append(np.array(rows_i))
    return o_u, o_i


def tiny_overfit_log():
    """3 users, 2 domains, 3 items per domain, 2 interactions per
    (user, domain): the memorization dataset. The later interaction of
    each pair becomes the eval positive under the leave-latest split."""
    from crossrec.data import _build_log
    records = []
    ts = 0
    for u in range(3):
        for d in range(2):
            for off in (0, 1):
                records.append((f"u{u}", f"i{(u + off) % 3}", f"d{d}", ts))
                ts += 1
    return _build_log(records)
