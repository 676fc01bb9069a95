"""Compiled inner loops. Transitions are passed as CSR rows indexed s * A + a."""
import numba
import numpy as np
import scipy.sparse as sp

# status codes returned by mb_loop
RUNNING, MAX_ITERS, CONVERGED, GREEDY_STABLE, DIVERGED, NONFINITE = range(6)
N_METRICS = 6  # iter, l1, linf, min residual, objective, negative flag

DIVERGENCE_BOUND = 1e12


def csr_rows(P):
    A, S, _ = P.shape
    m = sp.csr_matrix(P.transpose(1, 0, 2).reshape(S * A, S))
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64)


@numba.njit(cache=True)
def _h(x, variant):
    if variant == 1:
        return x if x > 0.0 else 0.0
    if variant == 2:
        return abs(x)
    return x


@numba.njit(cache=True)
def mb_loop(V, th, indptr, indices, data, r, gamma, rho, beta, lam, eta_v, eta_pi,
            variant, max_iters, stride, tol, window, v_tol, pi_star, v_star, out):
    """Run model-based updates in place on (V, th).

    Returns (rows written, status, iterations completed). Rows are recorded
    from the pre-step state at every `stride`-th iteration and at the last one.
    """
    S, A = th.shape
    pi = np.empty((S, A))
    logpi = np.empty((S, A))
    PV = np.empty((S, A))
    G = np.empty((S, A))
    ell = np.empty(S)
    GV = np.empty(S)
    greedy_prev = np.full(S, -1, np.int64)
    stable = 0
    rows = 0
    status = RUNNING
    k = 0
    while k < max_iters:
        # policy, residual and its pieces at the current state
        for s in range(S):
            m = th[s, 0]
            for a in range(1, A):
                if th[s, a] > m:
                    m = th[s, a]
            z = 0.0
            for a in range(A):
                pi[s, a] = np.exp(th[s, a] - m)
                z += pi[s, a]
            lz = np.log(z)
            for a in range(A):
                pi[s, a] /= z
                logpi[s, a] = th[s, a] - m - lz
        for s in range(S):
            acc = 0.0
            for a in range(A):
                row = s * A + a
                pv = 0.0
                for j in range(indptr[row], indptr[row + 1]):
                    pv += data[j] * V[indices[j]]
                PV[s, a] = pv
                acc += pi[s, a] * (r[s, a] + gamma * pv - lam * logpi[s, a])
            ell[s] = V[s] - acc
        for t in range(S):
            GV[t] = -rho[t] + beta * ell[t] * rho[t]
        for s in range(S):
            x = beta * gamma * ell[s] * rho[s]
            for a in range(A):
                row = s * A + a
                w = x * pi[s, a]
                for j in range(indptr[row], indptr[row + 1]):
                    GV[indices[j]] -= w * data[j]
        gmax = 0.0
        for s in range(S):
            c = beta * rho[s] * _h(ell[s], variant)
            mean = 0.0
            for a in range(A):
                G[s, a] = c * (-gamma * PV[s, a] - r[s, a] + lam * logpi[s, a])
                mean += G[s, a]
            mean /= A
            for a in range(A):
                d = abs(G[s, a] - mean)
                if d > gmax:
                    gmax = d
        gv = 0.0
        for s in range(S):
            if abs(GV[s]) > gv:
                gv = abs(GV[s])

        # stopping rules, evaluated on the pre-step state
        if gv + gmax < tol:
            status = CONVERGED
        if window > 0:
            same = True
            for s in range(S):
                best = 0
                for a in range(1, A):
                    if th[s, a] > th[s, best]:
                        best = a
                if best != greedy_prev[s]:
                    same = False
                greedy_prev[s] = best
            stable = stable + 1 if same else 0
            if stable >= window and gv < v_tol and status == RUNNING:
                status = GREEDY_STABLE

        last = status != RUNNING or k == max_iters - 1
        if k % stride == 0 or last:
            l1 = 0.0
            linf = 0.0
            lmin = ell[0]
            obj = 0.0
            for s in range(S):
                for a in range(A):
                    l1 += abs(pi[s, a] - pi_star[s, a])
                dv = abs(V[s] - v_star[s])
                if dv > linf:
                    linf = dv
                if ell[s] < lmin:
                    lmin = ell[s]
                obj += -rho[s] * V[s] + 0.5 * beta * rho[s] * ell[s] * ell[s]
            out[rows, 0] = k
            out[rows, 1] = l1
            out[rows, 2] = linf
            out[rows, 3] = lmin
            out[rows, 4] = obj
            out[rows, 5] = 1.0 if lmin < 0.0 else 0.0
            rows += 1
        if status != RUNNING:
            return rows, status, k

        # step
        vmax = 0.0
        for s in range(S):
            V[s] -= eta_v * GV[s]
            if not np.isfinite(V[s]):
                return rows, NONFINITE, k
            if abs(V[s]) > vmax:
                vmax = abs(V[s])
            m = -np.inf
            for a in range(A):
                th[s, a] -= eta_pi * G[s, a]
                if th[s, a] > m:
                    m = th[s, a]
            for a in range(A):
                th[s, a] -= m
                if not np.isfinite(th[s, a]):
                    return rows, NONFINITE, k
        k += 1
        if vmax > DIVERGENCE_BOUND:
            return rows, DIVERGED, k
    return rows, MAX_ITERS, k


def deterministic_two_action(P):
    """Next-state table (S, 2) if P is deterministic with two actions, else None."""
    if P.shape[0] != 2 or not np.all((P == 0) | (P == 1)):
        return None
    return np.ascontiguousarray(P.argmax(axis=2).T)


@numba.njit(cache=True, error_model="numpy", fastmath={"nsz", "arcp", "contract", "afn", "reassoc"})
def mb_loop_det2(V, d, nxt, r, gamma, rho, beta, lam, eta_v, eta_pi,
                 variant, max_iters, stride, tol, window, v_tol, pi_star, v_star, out):
    """mb_loop specialised to deterministic two-action MDPs.

    The policy is carried as d[s] = theta[s, 1] - theta[s, 0], which is all a
    two-action soft-max depends on.
    """
    S = V.shape[0]
    p1 = np.empty(S)
    l0 = np.empty(S)
    l1 = np.empty(S)
    ell = np.empty(S)
    GV = np.empty(S)
    step = np.empty(S)
    greedy_prev = np.full(S, -1, np.int64)
    stable = 0
    rows = 0
    status = RUNNING
    k = 0
    while k < max_iters:
        for s in range(S):
            e = np.exp(-abs(d[s]))
            if d[s] > 0:
                p1[s] = 1.0 / (1.0 + e)
            else:
                p1[s] = e / (1.0 + e)
            if lam > 0.0:
                lz = np.log1p(e)
                if d[s] > 0:
                    l1[s] = -lz
                    l0[s] = -d[s] - lz
                else:
                    l0[s] = -lz
                    l1[s] = d[s] - lz
            else:
                l0[s] = 0.0
                l1[s] = 0.0
            p0 = 1.0 - p1[s]
            v0 = V[nxt[s, 0]]
            v1 = V[nxt[s, 1]]
            ell[s] = V[s] - (p0 * (r[s, 0] + gamma * v0 - lam * l0[s])
                             + p1[s] * (r[s, 1] + gamma * v1 - lam * l1[s]))
            GV[s] = -rho[s] + beta * ell[s] * rho[s]
        for s in range(S):
            x = beta * gamma * ell[s] * rho[s]
            GV[nxt[s, 0]] -= x * (1.0 - p1[s])
            GV[nxt[s, 1]] -= x * p1[s]
        gmax = 0.0
        gv = 0.0
        for s in range(S):
            c = beta * rho[s] * _h(ell[s], variant)
            g0 = -gamma * V[nxt[s, 0]] - r[s, 0] + lam * l0[s]
            g1 = -gamma * V[nxt[s, 1]] - r[s, 1] + lam * l1[s]
            step[s] = c * (g1 - g0)
            if 0.5 * abs(step[s]) > gmax:
                gmax = 0.5 * abs(step[s])
            if abs(GV[s]) > gv:
                gv = abs(GV[s])

        if gv + gmax < tol:
            status = CONVERGED
        if window > 0:
            same = True
            for s in range(S):
                best = 1 if d[s] > 0 else 0
                if best != greedy_prev[s]:
                    same = False
                greedy_prev[s] = best
            stable = stable + 1 if same else 0
            if stable >= window and gv < v_tol and status == RUNNING:
                status = GREEDY_STABLE

        last = status != RUNNING or k == max_iters - 1
        if k % stride == 0 or last:
            l1n = 0.0
            linf = 0.0
            lmin = ell[0]
            obj = 0.0
            for s in range(S):
                l1n += abs(1.0 - p1[s] - pi_star[s, 0]) + abs(p1[s] - pi_star[s, 1])
                dv = abs(V[s] - v_star[s])
                if dv > linf:
                    linf = dv
                if ell[s] < lmin:
                    lmin = ell[s]
                obj += -rho[s] * V[s] + 0.5 * beta * rho[s] * ell[s] * ell[s]
            out[rows, 0] = k
            out[rows, 1] = l1n
            out[rows, 2] = linf
            out[rows, 3] = lmin
            out[rows, 4] = obj
            out[rows, 5] = 1.0 if lmin < 0.0 else 0.0
            rows += 1
        if status != RUNNING:
            return rows, status, k

        vmax = 0.0
        for s in range(S):
            V[s] -= eta_v * GV[s]
            d[s] -= eta_pi * step[s]
            if not (np.isfinite(V[s]) and np.isfinite(d[s])):
                return rows, NONFINITE, k
            if abs(V[s]) > vmax:
                vmax = abs(V[s])
        k += 1
        if vmax > DIVERGENCE_BOUND:
            return rows, DIVERGED, k
    return rows, MAX_ITERS, k
