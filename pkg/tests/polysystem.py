"""Dense test system with every eps/beta cross term up to eps^2 beta."""

import numpy as np

from cfoed.sensitivity import SystemDerivatives, solve_sensitivity_cascade


class PolySystem:
    """D and Q with every mixed term up to eps^2 beta, so all cascade partials are nonzero."""

    def __init__(self, rng, n, P, C):
        self.P, self.C = P, C
        def mats(*shape, scale=0.3):
            return scale * rng.standard_normal((*shape, n, n))
        def vecs(*shape):
            return rng.standard_normal((*shape, n))
        self.A0 = mats(scale=1.0) + 4 * n ** 0.5 * np.eye(n)
        self.A, self.B, self.E = mats(P), mats(C), mats(P, C)
        Cm, G = mats(P, P), mats(P, P, C)
        self.Cm = 0.5 * (Cm + Cm.transpose(1, 0, 2, 3))
        self.G = 0.5 * (G + G.transpose(1, 0, 2, 3, 4))
        self.q0, self.qa, self.qb, self.qe = vecs(), vecs(P), vecs(C), vecs(P, C)
        qc, qg = vecs(P, P), vecs(P, P, C)
        self.qc = 0.5 * (qc + qc.transpose(1, 0, 2))
        self.qg = 0.5 * (qg + qg.transpose(1, 0, 2, 3))

    def D(self, e, b):
        return (self.A0 + np.einsum("a,aij->ij", e, self.A) + np.einsum("k,kij->ij", b, self.B)
                + np.einsum("a,g,agij->ij", e, e, self.Cm) + np.einsum("a,k,akij->ij", e, b, self.E)
                + np.einsum("a,g,k,agkij->ij", e, e, b, self.G))

    def Q(self, e, b):
        return (self.q0 + e @ self.qa + b @ self.qb + np.einsum("a,g,agi->i", e, e, self.qc)
                + np.einsum("a,k,aki->i", e, b, self.qe) + np.einsum("a,g,k,agki->i", e, e, b, self.qg))

    def y(self, e, b):
        return np.linalg.solve(self.D(e, b), self.Q(e, b))

    def derivs(self, e, b):
        P, C = self.P, self.C
        n = self.A0.shape[0]
        L = lambda x: [list(r) for r in x] if np.ndim(x) > 3 else list(x)
        dDe = self.A + 2 * np.einsum("g,agij->aij", e, self.Cm) + np.einsum("k,akij->aij", b, self.E) \
            + 2 * np.einsum("g,k,agkij->aij", e, b, self.G)
        dDb = self.B + np.einsum("a,akij->kij", e, self.E) + np.einsum("a,g,agkij->kij", e, e, self.G)
        d2Dee = 2 * self.Cm + 2 * np.einsum("k,agkij->agij", b, self.G)
        d2Deb = self.E + 2 * np.einsum("g,agkij->akij", e, self.G)
        d3D = 2 * self.G
        dQe = self.qa + 2 * np.einsum("g,agi->ai", e, self.qc) + np.einsum("k,aki->ai", b, self.qe) \
            + 2 * np.einsum("g,k,agki->ai", e, b, self.qg)
        dQb = self.qb + np.einsum("a,aki->ki", e, self.qe) + np.einsum("a,g,agki->ki", e, e, self.qg)
        d2Qee = 2 * self.qc + 2 * np.einsum("k,agki->agi", b, self.qg)
        d2Qeb = self.qe + 2 * np.einsum("g,agki->aki", e, self.qg)
        d3Q = 2 * self.qg
        nest = lambda arr, depth: [nest(x, depth - 1) for x in arr] if depth else arr
        return SystemDerivatives(
            n, P, C,
            dD_deps=nest(dDe, 1), dD_dbeta=nest(dDb, 1), d2D_deps2=nest(d2Dee, 2),
            d2D_depsdbeta=nest(d2Deb, 2), d3D_depsdepsdbeta=nest(d3D, 3),
            dQ_deps=nest(dQe, 1), dQ_dbeta=nest(dQb, 1), d2Q_deps2=nest(d2Qee, 2),
            d2Q_depsdbeta=nest(d2Qeb, 2), d3Q_depsdepsdbeta=nest(d3Q, 3),
        )

    def cascade(self, e, b):
        return solve_sensitivity_cascade(self.derivs(e, b), self.D(e, b), self.y(e, b))
