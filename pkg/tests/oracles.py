"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's numerical code; inputs are plain lists
or numpy arrays and every quantity is computed element by element.
"""

from __future__ import annotations

import math


def dot(a, b) -> float:
    return sum(float(x) * float(y) for x, y in zip(a, b))


def norm(a) -> float:
    return math.sqrt(dot(a, a))


def unit(a) -> list[float]:
    n = norm(a)
    return [float(x) / n for x in a]


def mean_rows(rows) -> list[float]:
    d = len(rows[0])
    return [sum(float(r[k]) for r in rows) / len(rows) for k in range(d)]


def q_matrix(x) -> list[list[float]]:
    n = len(x)
    return [[dot(x[i], x[j]) for j in range(n)] for i in range(n)]


def k_matrix(Q, image_of, n_scenes) -> list[list[float]]:
    K = [[-math.inf] * n_scenes for _ in range(n_scenes)]
    for m in range(len(image_of)):
        for n in range(len(image_of)):
            a, b = image_of[m], image_of[n]
            if Q[m][n] > K[a][b]:
                K[a][b] = Q[m][n]
    return K


def hybrid(Q, K, image_of, lam) -> list[list[float]]:
    n = len(Q)
    return [[Q[i][j] + lam * K[image_of[i]][image_of[j]] for j in range(n)] for i in range(n)]


def first_neighbor(Qp, image_of, masked=False) -> list[int]:
    out = []
    for i in range(len(Qp)):
        best, arg = -math.inf, -1
        for j in range(len(Qp)):
            if j == i or (masked and image_of[j] == image_of[i]):
                continue
            if Qp[i][j] > best:  # strict: the first (smallest) index wins ties
                best, arg = Qp[i][j], j
        out.append(arg)
    return out


def link_predicate(kappa, image_of, i, j) -> bool:
    if i == j or image_of[i] == image_of[j]:
        return False
    ki, kj = kappa[i], kappa[j]
    return (ki == j) or (kj == i) or (ki != -1 and ki == kj)


def link_edges(kappa, image_of) -> set[tuple[int, int]]:
    n = len(kappa)
    return {(i, j) for i in range(n) for j in range(i + 1, n) if link_predicate(kappa, image_of, i, j)}


def dfs_components(n, edges) -> list[list[int]]:
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return sorted(comps)


def filter_oracle(clusters, x, image_of) -> list[list[int]]:
    out = []
    for mem in clusters:
        if len(mem) < 2:
            out.append(list(mem))
            continue
        c = unit(mean_rows([x[i] for i in mem]))
        sims = {i: dot(x[i], c) for i in mem}
        keep = []
        for i in mem:
            rivals = [j for j in mem if image_of[j] == image_of[i]]
            best = max(rivals, key=lambda j: (sims[j], -j))
            if best == i:
                keep.append(i)
            else:
                out.append([i])
        out.append(sorted(keep))
    return sorted(out)


def softmax_ce(q, keys, target, tau) -> tuple[float, list[float]]:
    logits = [dot(q, k) / tau for k in keys]
    top = max(logits)
    z = sum(math.exp(v - top) for v in logits)
    value = -(logits[target] - top - math.log(z))
    p = [math.exp(v - top) / z for v in logits]
    d = len(q)
    grad = [(sum(p[i] * keys[i][k] for i in range(len(keys))) - keys[target][k]) / tau for k in range(d)]
    return value, grad


def hard_keys(q, pos, groups) -> list[list[float]]:
    """``groups[k]`` lists cluster k's stored member features."""
    keys = []
    for k, mem in enumerate(groups):
        sims = [dot(q, x) for x in mem]
        pick = sims.index(min(sims)) if k == pos else sims.index(max(sims))
        keys.append(list(mem[pick]))
    return keys


def average_precision(flags) -> float:
    hits, total = 0, 0.0
    for r, f in enumerate(flags, start=1):
        if f:
            hits += 1
            total += hits / r
    return total / hits


def brute_retrieval(queries, gallery, relevance, ks):
    """Rank by repeated selection of the best remaining item (lower index on ties)."""
    aps, firsts = [], []
    for qi, q in enumerate(queries):
        rel = set(relevance[qi])
        if not rel:
            continue
        left = list(range(len(gallery)))
        ranked = []
        while left:
            best = left[0]
            for j in left[1:]:
                if dot(q, gallery[j]) > dot(q, gallery[best]):
                    best = j
            ranked.append(best)
            left.remove(best)
        flags = [j in rel for j in ranked]
        aps.append(average_precision(flags))
        firsts.append(flags.index(True))
    mAP = sum(aps) / len(aps) if aps else 0.0
    cmc = {k: (sum(1 for f in firsts if f < k) / len(firsts) if firsts else 0.0) for k in ks}
    return mAP, cmc


def pairwise_prf(pred, truth) -> tuple[float, float, float]:
    tp = pp = tt = 0
    n = len(pred)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = pred[i] == pred[j], truth[i] == truth[j]
            tp += a and b
            pp += a
            tt += b
    p = tp / pp if pp else 1.0
    r = tp / tt if tt else 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])  # noqa: E731
    return inter / (area(a) + area(b) - inter)
