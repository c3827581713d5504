"""Slow, loop-based reference evaluators used as test oracles.

These deliberately avoid the package's code paths: plain Python loops and
``math`` on scalars, so a shared bug cannot make both sides agree.
"""

import itertools
import math

import numpy as np


def recon(X, X_hat):
    total = 0.0
    for x, y in zip(X, X_hat):
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                total += (x[i, j] - y[i, j]) ** 2
    return total


def subspace(C, Z):
    # ||C^T - C^T Z||_F^2 with C^T the d x N matrix of column samples
    total = 0.0
    for c, z in zip(C, Z):
        n, d = c.shape
        for a in range(d):
            for j in range(n):
                s = sum(c[i, a] * z[i, j] for i in range(n))
                total += (c[j, a] - s) ** 2
    return total


def cos(u, v):
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def view_contrastive(v, Z, tau):
    V, N = len(Z), Z[0].shape[0]
    loss = 0.0
    for i in range(N):
        for k in range(V):
            if k == v:
                continue
            num = math.exp(cos(Z[v][i], Z[k][i]) / tau)
            den = sum(math.exp(cos(Z[v][i], Z[v][j]) / tau) for j in range(N) if j != i)
            den += sum(math.exp(cos(Z[v][i], Z[k][j]) / tau) for j in range(N))
            loss -= math.log(num / den)
    return loss


def contrastive(Z, tau):
    V, N = len(Z), Z[0].shape[0]
    return sum(view_contrastive(v, Z, tau) for v in range(V)) / (N * V)


def fusion(Z, A):
    n = A.shape[0]
    total = sum(A[i, j] ** 2 for i in range(n) for j in range(n))
    for z in Z:
        for i in range(n):
            for j in range(n):
                total += A[i, j] * sum((z[i, a] - z[j, a]) ** 2 for a in range(z.shape[1]))
    return total


def adam(params, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on a single array; returns the trajectory of iterates."""
    x = np.array(params, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    out = []
    for t, g in enumerate(grads_seq, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(x.copy())
    return out


def best_permutation_acc(pred, truth):
    pred, truth = list(pred), list(truth)
    clusters = sorted(set(pred))
    classes = sorted(set(truth))
    k = max(len(clusters), len(classes))
    targets = classes + [None] * (k - len(classes))
    best = 0
    for perm in itertools.permutations(targets, len(clusters)):
        mapping = dict(zip(clusters, perm))
        best = max(best, sum(mapping[p] == t for p, t in zip(pred, truth)))
    return best / len(pred)


def pair_counts(pred, truth):
    tp = fp = fn = tn = 0
    n = len(pred)
    for i in range(n):
        for j in range(i + 1, n):
            same_p = pred[i] == pred[j]
            same_t = truth[i] == truth[j]
            tp += same_p and same_t
            fp += same_p and not same_t
            fn += same_t and not same_p
            tn += not same_p and not same_t
    return tp, fp, fn, tn


def ari(pred, truth):
    tp, fp, fn, tn = pair_counts(pred, truth)
    total = tp + fp + fn + tn
    expected = (tp + fp) * (tp + fn) / total
    max_index = ((tp + fp) + (tp + fn)) / 2
    if max_index == expected:
        return 1.0
    return (tp - expected) / (max_index - expected)


def nmi_geometric(pred, truth):
    n = len(pred)
    pc = {p: pred.count(p) / n for p in set(pred)}
    tc = {t: truth.count(t) / n for t in set(truth)}
    joint = {}
    for p, t in zip(pred, truth):
        joint[(p, t)] = joint.get((p, t), 0) + 1 / n
    mi = sum(q * math.log(q / (pc[p] * tc[t])) for (p, t), q in joint.items())
    hp = -sum(q * math.log(q) for q in pc.values())
    ht = -sum(q * math.log(q) for q in tc.values())
    return mi / math.sqrt(hp * ht)


def purity(pred, truth):
    total = 0
    for p in set(pred):
        members = [t for q, t in zip(pred, truth) if q == p]
        total += max(members.count(t) for t in set(members))
    return total / len(pred)


def min_wcss_2partition(points):
    n = len(points)
    best = math.inf
    for mask in range(1, 2 ** (n - 1)):
        groups = [[p for i, p in enumerate(points) if (mask >> i) & 1 == g] for g in (0, 1)]
        if not groups[0] or not groups[1]:
            continue
        cost = 0.0
        for grp in groups:
            g = np.array(grp)
            cost += float(np.sum((g - g.mean(axis=0)) ** 2))
        best = min(best, cost)
    return best
