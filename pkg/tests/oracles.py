"""Reference implementations written straight from the definitions.

Plain Python loops and the ``math`` module only, so nothing here shares
code (or vectorisation bugs) with the package under test.
"""

import math

EPS = 1e-10


def dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def cosine(a, b):
    na = math.sqrt(dot(a, a))
    nb = math.sqrt(dot(b, b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot(a, b) / (na * nb)))


def kernel(m, mu, sigma):
    return math.exp(-((m - mu) ** 2) / (2.0 * sigma * sigma))


def interest(profile, topics, mus, sigmas):
    m = cosine(profile, topics)
    return [math.log(max(kernel(m, mu, s), EPS)) for mu, s in zip(mus, sigmas)]


def semantic(q_layers, d_layers, mus, sigmas):
    """Layer-major concatenation of sum_i log(max(sum_j K(cos(q_i, d_j)), eps))."""
    out = []
    for q, d in zip(q_layers, d_layers):
        for mu, s in zip(mus, sigmas):
            total = 0.0
            for qi in q:
                row = 0.0
                for dj in d:
                    row += kernel(cosine(qi, dj), mu, s)
                total += math.log(max(row, EPS))
            out.append(total)
    return out


def click_ranks(ranking, clicked):
    return [r for r, d in enumerate(ranking, start=1) if d in clicked]


def average_precision(ranking, clicked):
    ranks = click_ranks(ranking, clicked)
    precisions = []
    for r in ranks:
        hits = sum(1 for d in ranking[:r] if d in clicked)
        precisions.append(hits / r)
    return sum(precisions) / len(precisions)


def reciprocal_rank(ranking, clicked):
    for r, d in enumerate(ranking, start=1):
        if d in clicked:
            return 1.0 / r
    raise ValueError("no click")


def precision_at_1(ranking, clicked):
    return 1.0 if ranking[0] in clicked else 0.0


def metrics(cases):
    """cases: list of (ranking, clicked); impressions without clicks are skipped."""
    kept = [(r, c) for r, c in cases if c]
    positions = [p for r, c in kept for p in click_ranks(r, c)]
    n = len(kept)
    return {
        "map": sum(average_precision(r, c) for r, c in kept) / n,
        "mrr": sum(reciprocal_rank(r, c) for r, c in kept) / n,
        "p_at_1": sum(precision_at_1(r, c) for r, c in kept) / n,
        "a_clk": sum(positions) / len(positions),
        "excluded": len(cases) - n,
    }


def mean_vector(vectors):
    n = len(vectors)
    return [sum(v[k] for v in vectors) / n for k in range(len(vectors[0]))]
