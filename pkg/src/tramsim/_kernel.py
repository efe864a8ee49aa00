"""
Scaled drift-diffusion system: residual, Jacobian and damped Newton.

Internal units: potentials in V_T, densities in n_i, lengths in the
intrinsic Debye length L_D, time in L_D^2 / (1 cm^2/s).  Unknowns per node
are ``(psi, phi_n, phi_p)`` ordered node-major, which makes the Jacobian a
band matrix with 5 sub- and super-diagonals.

Quasi-Fermi potentials are stored as per-edge increments.  The node values
are only ever used inside exponentials, while every flux is written in
Slotboom form ``-B(-d) n_L expm1(-dphi)``, so tiny currents riding on huge
majority densities keep full relative precision.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.linalg.lapack import dgbtrf, dgbtrs

from .physics import EPS0, Q, bernoulli, bernoulli_prime, mobility

D0 = 1.0  # cm^2/s, diffusivity scale
BAND = 5
TINY = 1e-200


class ConvergenceError(RuntimeError):
    def __init__(self, message, iterations=0, residual=np.inf):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass
class RawState:
    """Scaled unknowns; ``dn``/``dp`` are quasi-Fermi increments per edge."""

    psi: np.ndarray
    dn: np.ndarray
    dp: np.ndarray
    va: float  # scaled anode voltage, phi at node 0

    def copy(self):
        return RawState(self.psi.copy(), self.dn.copy(), self.dp.copy(), self.va)

    def phi_n(self):
        return self.va + np.concatenate([[0.0], np.cumsum(self.dn)])

    def phi_p(self):
        return self.va + np.concatenate([[0.0], np.cumsum(self.dp)])


class Jacobian:
    """
    Newton matrix in extended form.

    Per node the unknowns are ``(psi, X_n, X_p, D_n, D_p)``: the potential
    update, the nodal quasi-Fermi updates and the quasi-Fermi increment
    updates of the edge to the right, tied by ``X_{i+1} - X_i - D_i = 0``.
    Fluxes depend on the increments directly, so an LU solve determines them
    to full relative precision even where the nodal updates are ~1e17 times
    larger than the increments (heavily doped neutral layers).  The matrix
    is banded with 9 sub- and super-diagonals.
    """

    K = 5
    BW = 9
    REFINE_STEPS = 3

    _layout_cache = {}

    def __init__(self, N, h, cv):
        self._layout = self._layout_cache.get((N, self.K))
        self.N = N
        self.h = h
        self.cv = cv
        self.ab = None
        self._lu = None
        self.backward_error = np.nan

    def build(self):
        """Assemble the band storage; the index layout is computed once and cached."""
        N, K, BW = self.N, self.K, self.BW
        shape = (2 * BW + 1, K * N)
        layout = getattr(self, "_layout", None)
        idx_parts, val_parts = [], []

        def put(rn, a, cn, b, vals):
            if layout is None:
                rows = BW + K * rn + a - K * cn - b
                idx_parts.append(np.ravel_multi_index((rows, K * cn + b), shape))
            val_parts.append(np.broadcast_to(vals, np.shape(rn)))

        I = slice(1, N - 1)
        idx = np.arange(1, N - 1)
        hl, hr = self.h[:-1], self.h[1:]
        re, le = slice(1, N - 1), slice(0, N - 2)

        put(idx, 0, idx - 1, 0, 1.0 / hl)
        put(idx, 0, idx + 1, 0, 1.0 / hr)
        put(idx, 0, idx, 0, -1.0 / hl - 1.0 / hr + self.pois_diag[I])
        put(idx, 0, idx, 1, self.pois_n[I])
        put(idx, 0, idx, 2, self.pois_p[I])

        jn, jp = self.jn, self.jp
        nps, nph = self.dJn_psiR, self.dJn_phiR
        pps, pph = self.dJp_psiR, self.dJp_phiR
        # electron row: dJn_i - dJn_{i-1} + local
        put(idx, 1, idx, 0, jn[re] - nps[re] - nps[le])
        put(idx, 1, idx + 1, 0, nps[re])
        put(idx, 1, idx - 1, 0, -(jn[le] - nps[le]))
        put(idx, 1, idx, 1, -jn[re])
        put(idx, 1, idx - 1, 1, jn[le])
        put(idx, 1, idx, 3, nph[re])
        put(idx, 1, idx - 1, 3, -nph[le])
        # hole row: -(dJp_i - dJp_{i-1}) + local
        put(idx, 2, idx, 0, jp[re] + pps[re] + pps[le])
        put(idx, 2, idx + 1, 0, -pps[re])
        put(idx, 2, idx - 1, 0, -(jp[le] + pps[le]))
        put(idx, 2, idx, 2, -jp[re])
        put(idx, 2, idx - 1, 2, jp[le])
        put(idx, 2, idx, 4, -pph[re])
        put(idx, 2, idx - 1, 4, pph[le])
        for b in range(3):
            put(idx, 1, idx, b, self.loc_n[I, b])
            put(idx, 2, idx, b, self.loc_p[I, b])

        edges = np.arange(N - 1)
        for a, x in ((3, 1), (4, 2)):
            put(edges, a, edges + 1, x, 1.0)
            put(edges, a, edges, x, -1.0)
            put(edges, a, edges, a, -1.0)
        ends = np.array([0, N - 1])
        for a in range(3):
            put(ends, a, ends, a, 1.0)
        for a in (3, 4):
            put(np.array([N - 1]), a, np.array([N - 1]), a, 1.0)
        if layout is None:
            layout = np.concatenate(idx_parts)
            type(self)._layout_cache[(N, K)] = layout
            self._layout = layout
        ab = np.bincount(layout, weights=np.concatenate(val_parts),
                         minlength=shape[0] * shape[1]).reshape(shape)
        self.ab = ab
        return ab

    def apply(self, y, absolute=False):
        """
        Product of the extended matrix with `y`.

        With ``absolute=True`` each row returns the sum of the magnitudes of
        its terms, the reference size for a componentwise backward error.
        """
        N = self.N
        I = slice(1, N - 1)
        s, xn, xp, dn, dp = (y[k::5] for k in range(5))
        ds = np.diff(s)
        loc = np.stack([s, xn, xp], axis=1)[I]
        g = ds / self.h
        pois_local = (self.pois_diag[I] * s[I], self.pois_n[I] * xn[I], self.pois_p[I] * xp[I])
        djn = (self.jn * (s[:-1] - xn[:-1]), self.dJn_psiR * ds, self.dJn_phiR * dn[:-1])
        djp = (self.jp * (xp[:-1] - s[:-1]), self.dJp_psiR * ds, self.dJp_phiR * dp[:-1])
        loc_n = self.loc_n[I] * loc
        loc_p = self.loc_p[I] * loc
        cn = (np.diff(xn), dn[:-1])
        cp = (np.diff(xp), dp[:-1])
        out = np.empty(5 * N)
        if absolute:
            g = np.abs(g)
            jn = sum(np.abs(t) for t in djn)
            jp = sum(np.abs(t) for t in djp)
            out[5:5 * (N - 1):5] = g[1:] + g[:-1] + sum(np.abs(t) for t in pois_local)
            out[6:5 * (N - 1):5] = jn[1:] + jn[:-1] + np.sum(np.abs(loc_n), axis=1)
            out[7:5 * (N - 1):5] = jp[1:] + jp[:-1] + np.sum(np.abs(loc_p), axis=1)
            out[3:5 * (N - 1):5] = np.abs(xn[1:]) + np.abs(xn[:-1]) + np.abs(cn[1])
            out[4:5 * (N - 1):5] = np.abs(xp[1:]) + np.abs(xp[:-1]) + np.abs(cp[1])
            out[:3] = np.abs(y[:3])
            out[-5:] = np.abs(y[-5:])
            return out
        jn = sum(djn)
        jp = sum(djp)
        out[5:5 * (N - 1):5] = g[1:] - g[:-1] + sum(pois_local)
        out[6:5 * (N - 1):5] = jn[1:] - jn[:-1] + np.sum(loc_n, axis=1)
        out[7:5 * (N - 1):5] = -(jp[1:] - jp[:-1]) + np.sum(loc_p, axis=1)
        out[3:5 * (N - 1):5] = cn[0] - cn[1]
        out[4:5 * (N - 1):5] = cp[0] - cp[1]
        out[:3] = y[:3]
        out[-5:] = y[-5:]
        return out

    def _factor(self):
        # row then column equilibration; ab[k, c] holds A[c + k - BW, c]
        ab = self.ab if self.ab is not None else self.build()
        BW = self.BW
        M = ab.shape[1]
        rowmax = np.zeros(M)
        for k in range(2 * BW + 1):
            off = k - BW
            vals = np.abs(ab[k])
            if off >= 0:
                rowmax[off:] = np.maximum(rowmax[off:], vals[:M - off])
            else:
                rowmax[:M + off] = np.maximum(rowmax[:M + off], vals[-off:])
        rowmax[rowmax == 0] = 1.0
        r = 1.0 / rowmax
        ext = np.zeros((3 * BW + 1, M))
        for k in range(2 * BW + 1):
            off = k - BW
            if off >= 0:
                ext[BW + k, :M - off] = ab[k, :M - off] * r[off:]
            else:
                ext[BW + k, -off:] = ab[k, -off:] * r[:M + off]
        colmax = np.max(np.abs(ext), axis=0)
        colmax[colmax == 0] = 1.0
        c = 1.0 / colmax
        ext *= c
        lu, piv, info = dgbtrf(ext, BW, BW)
        self._lu = (lu, piv, r, c, info)

    def _lu_solve(self, rhs):
        lu, piv, r, c, info = self._lu
        if info != 0:
            return np.full(rhs.size, np.nan)
        y, _ = dgbtrs(lu, self.BW, self.BW, rhs * r, piv)
        return y * c

    def extend(self, rhs3):
        """Residual vector in node-major ``(psi, n, p)`` layout to extended layout."""
        out = np.zeros(5 * self.N)
        for k in range(3):
            out[k::5] = rhs3[k::3]
        return out

    def solve(self, rhs3):
        """
        Solve for the Newton step with right-hand side `rhs3` (3 per node).

        Returns the extended solution; see :meth:`System.update`.
        """
        if self._lu is None:
            self._factor()
        rhs = self.extend(rhs3)
        with np.errstate(all="ignore"):
            y = self._lu_solve(rhs)
            if not np.all(np.isfinite(y)):
                return y
            resid = rhs - self.apply(y)
            size = self._backward_error(rhs, resid, y)
            for _ in range(self.REFINE_STEPS):
                if size < 1e-14:
                    break
                trial = y + self._lu_solve(resid)
                trial_resid = rhs - self.apply(trial)
                trial_size = self._backward_error(rhs, trial_resid, trial)
                if not trial_size < 0.5 * size:
                    break
                y, resid, size = trial, trial_resid, trial_size
        self.backward_error = size
        return y

    def _backward_error(self, rhs, resid, y):
        ref = np.abs(rhs) + self.apply(y, absolute=True)
        ok = ref > 0
        return float(np.max(np.abs(resid[ok]) / ref[ok])) if np.any(ok) else 0.0


class System:
    """
    Discretised device: geometry, material and contact data in scaled form.

    Parameters
    ----------
    mesh : Mesh1D
    params : MaterialParams
    env : ThermalEnv
    gate : GateSpec or None
    area : float
        Cross-section in cm^2.
    """

    def __init__(self, mesh, params, env, gate=None, area=1.0):
        self.mesh = mesh
        self.params = params
        self.env = env
        self.gate = gate
        self.area = area
        self.vt = env.thermal_voltage
        self.ni = params.intrinsic_density_ni
        self.eps = params.permittivity
        self.ld = np.sqrt(self.eps * self.vt / (Q * self.ni))  # cm
        self.t0 = self.ld ** 2 / D0
        self.j0 = Q * self.ni * D0 / self.ld  # A/cm^2

        x = mesh.node_positions * 100.0 / self.ld
        self.N = x.size
        self.h = np.diff(x)
        cv = np.zeros(self.N)
        cv[:-1] += self.h / 2
        cv[1:] += self.h / 2
        self.cv = cv
        self.C = mesh.net_doping / self.ni

        mun = mobility(mesh.net_doping, "electron", params)
        mup = mobility(mesh.net_doping, "hole", params)
        mun = np.broadcast_to(mun, (self.N,))
        mup = np.broadcast_to(mup, (self.N,))
        # harmonic mean on edges
        dn_edge = 2.0 / (1.0 / mun[:-1] + 1.0 / mun[1:]) * self.vt / D0
        dp_edge = 2.0 / (1.0 / mup[:-1] + 1.0 / mup[1:]) * self.vt / D0
        self.an = dn_edge / self.h
        self.ap = dp_edge / self.h
        self.taun = params.srh_tau_n / self.t0
        self.taup = params.srh_tau_p / self.t0

        self.psi_contact = np.arcsinh(self.C[[0, -1]] / 2.0)
        flips = np.flatnonzero(np.sign(self.C[1:]) != np.sign(self.C[0]))
        self.first_junction_edge = int(flips[0]) if flips.size else 0
        self.last_junction_edge = int(flips[-1]) if flips.size else self.N - 2
        if gate is not None:
            cox = gate.oxide_relative_permittivity * EPS0 / (gate.oxide_thickness * 100.0)
            self.kappa = cox * self.vt / (gate.body_thickness * 100.0 * Q * self.ni)
            self.gate_f = np.asarray(mesh.gate_fraction, dtype=float)
            self.vfb = gate.flatband_voltage / self.vt
        else:
            self.kappa = 0.0
            self.gate_f = np.zeros(self.N)
            self.vfb = 0.0
        # current probes: the junction edge nearest each contact with no gate
        # charge between it and that contact.  Total current there equals the
        # terminal current exactly, and the small edge conductance keeps the
        # flux free of the cancellation found inside heavily doped layers.
        gated = np.flatnonzero(self.gate_f > 0)
        a_edge, k_edge = self.first_junction_edge, self.last_junction_edge
        if gated.size:
            a_edge = min(a_edge, max(int(gated[0]) - 1, 0))
            k_edge = max(k_edge, min(int(gated[-1]), self.N - 2))
        self.anode_probe = a_edge
        self.cathode_probe = k_edge

    # ------------------------------------------------------------ state utils

    def carriers(self, st):
        n = np.exp(st.psi - st.phi_n())
        p = np.exp(st.phi_p() - st.psi)
        n[0] = np.exp(self.psi_contact[0])
        p[0] = np.exp(-self.psi_contact[0])
        n[-1] = np.exp(self.psi_contact[1])
        p[-1] = np.exp(-self.psi_contact[1])
        return n, p

    def equilibrium_state(self, psi):
        z = np.zeros(self.N - 1)
        return RawState(np.asarray(psi, dtype=float).copy(), z.copy(), z.copy(), 0.0)

    def apply_bias(self, st, va):
        """
        Move the contacts to anode voltage `va` (scaled).

        The neutral layers next to the anode follow the contact rigidly: the
        voltage step goes onto the first metallurgical junction, where the
        device actually absorbs it.
        """
        out = st.copy()
        shift = va - st.va
        out.va = va
        edge = self.first_junction_edge
        out.dn[edge] -= shift
        out.dp[edge] -= shift
        out.psi[:edge + 1] += shift
        out.psi[0] = self.psi_contact[0] + va
        out.psi[-1] = self.psi_contact[1]
        # cathode stays at 0: re-close the increment chain on the last edge
        out.dn[-1] -= va + out.dn.sum()
        out.dp[-1] -= va + out.dp.sum()
        return out

    def state_from_densities(self, psi, n, p, va):
        phin = psi - np.log(n)
        phip = psi + np.log(p)
        phin[0] = phip[0] = va
        phin[-1] = phip[-1] = 0.0
        return RawState(np.asarray(psi, float).copy(), np.diff(phin), np.diff(phip), va)

    def gate_drive(self, vg):
        return vg - self.vfb

    # ------------------------------------------------------------ physics

    def fluxes(self, st, n=None, p=None):
        """Scaled electron and hole current densities on every edge."""
        if n is None:
            n, p = self.carriers(st)
        delta = np.diff(st.psi)
        jn = self.an * bernoulli(-delta) * n[:-1] * np.expm1(-st.dn)
        jp = -self.ap * bernoulli(delta) * p[:-1] * np.expm1(st.dp)
        return jn, jp

    def recombination(self, st, n, p):
        u = np.expm1(st.phi_p() - st.phi_n())
        den = self.taup * (n + 1.0) + self.taun * (p + 1.0)
        return u / den, u, den

    def gate_charge(self, psi, vg):
        return self.kappa * self.gate_f * (self.gate_drive(vg) - psi)

    # ------------------------------------------------------------ assembly

    def assemble(self, st, vg, dt=None, old=None, jacobian=True):
        """
        Residual and Jacobian at `st`.

        With `dt` (scaled) and `old` = (n_old, p_old), the continuity rows
        carry the backward-Euler time derivative.
        Returns ``F, scale, jac`` where `scale` holds the magnitude of the
        terms in each row (for the relative residual) and `jac` is a
        :class:`Jacobian`, or None with ``jacobian=False``.
        """
        N = self.N
        n, p = self.carriers(st)
        psi = st.psi
        delta = np.diff(psi)
        bp = bernoulli(delta)
        bm = bernoulli(-delta)
        en = np.expm1(-st.dn)
        ep = np.expm1(st.dp)
        nl = n[:-1]
        pl = p[:-1]
        jn = self.an * bm * nl * en
        jp = -self.ap * bp * pl * ep
        R, u, den = self.recombination(st, n, p)
        g = self.gate_charge(psi, vg)
        cv = self.cv
        I = slice(1, N - 1)

        F = np.zeros(3 * N)
        scale = np.ones(3 * N)
        efield = delta / self.h
        rho = p - n + self.C + g
        F[3:3 * (N - 1):3] = efield[1:] - efield[:-1] + cv[I] * rho[I]
        scale[3:3 * (N - 1):3] = (np.abs(efield[1:]) + np.abs(efield[:-1])
                                  + cv[I] * (p[I] + n[I] + np.abs(self.C[I]) + np.abs(g[I])))
        tn = tp = sn = sp = np.zeros(N)
        if dt is not None:
            tn = (n - old[0]) / dt
            tp = (p - old[1]) / dt
            # the new and old storage terms count separately in the row size
            sn = (n + old[0]) / dt
            sp = (p + old[1]) / dt
        F[4:3 * (N - 1):3] = jn[1:] - jn[:-1] - cv[I] * (R[I] + tn[I])
        scale[4:3 * (N - 1):3] = (np.abs(jn[1:]) + np.abs(jn[:-1])
                                  + cv[I] * (np.abs(R[I]) + sn[I]) + TINY)
        F[5:3 * (N - 1):3] = -(jp[1:] - jp[:-1]) - cv[I] * (R[I] + tp[I])
        scale[5:3 * (N - 1):3] = (np.abs(jp[1:]) + np.abs(jp[:-1])
                                  + cv[I] * (np.abs(R[I]) + sp[I]) + TINY)
        if not jacobian:
            return F, scale, None

        jac = Jacobian(N, self.h, cv)
        bmp = bernoulli_prime(-delta)
        bpp = bernoulli_prime(delta)
        # edge derivatives, L = left node, R = right node
        jac.jn, jac.jp = jn, jp
        jac.dJn_psiR = -self.an * nl * en * bmp
        jac.dJn_phiR = -self.an * bm * nl * (en + 1.0)
        jac.dJp_psiR = -self.ap * pl * ep * bpp
        jac.dJp_phiR = -self.ap * bp * pl * (ep + 1.0)
        jac.pois_diag = -cv * (p + n + self.kappa * self.gate_f)
        jac.pois_n = cv * n
        jac.pois_p = cv * p

        den2 = den * den
        np_ = n * p
        dR_psi = -u * (self.taup * n - self.taun * p) / den2
        dR_phin = (-np_ * den + u * self.taup * n) / den2
        dR_phip = (np_ * den - u * self.taun * p) / den2
        dtn = n / dt if dt is not None else np.zeros(N)
        dtp = p / dt if dt is not None else np.zeros(N)
        # node-local continuity couplings; columns are (psi, phi_n, phi_p)
        jac.loc_n = -cv[:, None] * np.stack([dR_psi + dtn, dR_phin - dtn, dR_phip], axis=1)
        jac.loc_p = -cv[:, None] * np.stack([dR_psi - dtp, dR_phin, dR_phip + dtp], axis=1)

        jac.build()
        return F, scale, jac

    # ------------------------------------------------------------ solvers

    def update(self, st, step):
        """Apply an extended Newton step (5 entries per node)."""
        out = st.copy()
        out.psi += step[0::5]
        out.dn += step[3::5][:-1]
        out.dp += step[4::5][:-1]
        return out

    @staticmethod
    def step_size(step):
        """Largest potential change of a step: psi and nodal quasi-Fermi updates."""
        return float(max(np.max(np.abs(step[k::5])) for k in range(3)))

    def newton(self, st, vg, cfg, dt=None, old=None, max_iter=None):
        """
        Damped Newton on the coupled system.

        Returns ``(state, iterations, residual)``; raises ConvergenceError.
        """
        max_iter = cfg.max_newton_iters if max_iter is None else max_iter
        max_step = cfg.max_step_VT
        psi_tol = cfg.psi_update_tol / self.vt
        res = np.inf
        for it in range(1, max_iter + 1):
            F, scale, jac = self.assemble(st, vg, dt, old)
            res = float(np.max(np.abs(F) / scale))
            if not np.isfinite(res):
                raise ConvergenceError("non-finite residual", it, res)
            step = jac.solve(-F)
            if not np.all(np.isfinite(step)):
                raise ConvergenceError("singular Jacobian", it, res)
            big = self.step_size(step)
            if big > max_step:
                step = step * (max_step / big)
            st = self.update(st, step)
            if res < cfg.residual_tol and np.max(np.abs(step[0::5])) < psi_tol:
                return st, it, res
        F, scale, _ = self.assemble(st, vg, dt, old, jacobian=False)
        res = float(np.max(np.abs(F) / scale))
        if res < cfg.residual_tol:
            return st, max_iter, res
        raise ConvergenceError(f"Newton did not converge in {max_iter} iterations "
                               f"(residual {res:.3e})", max_iter, res)

    # ---------------------------------------------------------- equilibrium

    def poisson_equilibrium(self, psi0, cfg, max_iter=None):
        """Nonlinear Poisson with Boltzmann carriers at zero bias."""
        max_iter = cfg.max_gummel_iters if max_iter is None else max_iter
        N = self.N
        psi = np.asarray(psi0, float).copy()
        psi[0], psi[-1] = self.psi_contact
        tol = cfg.psi_update_tol / self.vt
        hl, hr = self.h[:-1], self.h[1:]
        I = slice(1, N - 1)
        for it in range(1, max_iter + 1):
            n = np.exp(psi)
            p = np.exp(-psi)
            g = self.gate_charge(psi, 0.0)
            e = np.diff(psi) / self.h
            F = e[1:] - e[:-1] + self.cv[I] * (p[I] - n[I] + self.C[I] + g[I])
            diag = -1.0 / hl - 1.0 / hr - self.cv[I] * (p[I] + n[I] + self.kappa * self.gate_f[I])
            ab = np.zeros((3, N - 2))
            ab[0, 1:] = 1.0 / hr[:-1]
            ab[1] = diag
            ab[2, :-1] = 1.0 / hl[1:]
            step = solve_banded((1, 1), ab, -F, check_finite=False)
            big = np.max(np.abs(step))
            if big > cfg.max_step_VT:
                step *= cfg.max_step_VT / big
            psi[I] += step
            if big < tol:
                return psi, it, float(np.max(np.abs(F)))
        raise ConvergenceError(f"equilibrium Poisson did not converge in {max_iter} iterations",
                               max_iter, float(np.max(np.abs(F))))

    # --------------------------------------------------------------- Gummel

    def gummel(self, st, vg, cfg, max_iter=None, tol=None):
        """
        Decoupled iteration: Poisson with frozen quasi-Fermi levels, then the
        two (linearised) continuity equations for fixed potential.
        Returns ``(state, iterations, last_dpsi)``.
        """
        max_iter = cfg.max_gummel_iters if max_iter is None else max_iter
        tol = cfg.psi_update_tol / self.vt if tol is None else tol
        N = self.N
        I = slice(1, N - 1)
        hl, hr = self.h[:-1], self.h[1:]
        dpsi_max = np.inf
        for it in range(1, max_iter + 1):
            phin = st.phi_n()
            phip = st.phi_p()
            psi = st.psi.copy()
            # Poisson, a few Newton sweeps with phi frozen
            for _ in range(3):
                n = np.exp(psi - phin)
                p = np.exp(phip - psi)
                g = self.gate_charge(psi, vg)
                e = np.diff(psi) / self.h
                F = e[1:] - e[:-1] + self.cv[I] * (p[I] - n[I] + self.C[I] + g[I])
                ab = np.zeros((3, N - 2))
                ab[0, 1:] = 1.0 / hr[:-1]
                ab[1] = -1.0 / hl - 1.0 / hr - self.cv[I] * (p[I] + n[I] + self.kappa * self.gate_f[I])
                ab[2, :-1] = 1.0 / hl[1:]
                step = solve_banded((1, 1), ab, -F, check_finite=False)
                big = np.max(np.abs(step))
                if big > cfg.max_step_VT:
                    step *= cfg.max_step_VT / big
                psi[I] += step
            dpsi_max = float(np.max(np.abs(psi - st.psi)))
            n = np.exp(psi - phin)
            p = np.exp(phip - psi)
            n[0], n[-1] = np.exp(self.psi_contact)
            p[0], p[-1] = np.exp(-self.psi_contact)
            den = self.taup * (n + 1.0) + self.taun * (p + 1.0)
            delta = np.diff(psi)
            bp = bernoulli(delta)
            bm = bernoulli(-delta)
            # electrons: an*(bp*n_{i+1} - bm*n_i) balance, R ~ n*p/den - 1/den
            n_new = self._continuity_solve(self.an * bp, self.an * bm, p / den, 1.0 / den, n)
            # holes: jp = ap*(bp*p_i - bm*p_{i+1}); -(div jp) = R
            p_new = self._continuity_solve(self.ap * bm, self.ap * bp, n / den, 1.0 / den, p)
            n_new = np.maximum(n_new, 1e-300)
            p_new = np.maximum(p_new, 1e-300)
            va = st.va
            st = self.state_from_densities(psi, n_new, p_new, va)
            if dpsi_max < tol:
                return st, it, dpsi_max
        return st, max_iter, dpsi_max

    def _continuity_solve(self, fwd, bwd, lin, const, c_old):
        """
        Solve ``f_i - f_{i-1} = cv_i (lin_i c_i - const_i)`` for c, where the
        carrier flux is ``f_e = fwd_e c_{e+1} - bwd_e c_e`` (electrons) or the
        negated hole flux written the same way.  Contact values are kept.
        """
        N = self.N
        I = slice(1, N - 1)
        cv = self.cv[I]
        diag = -bwd[1:] - fwd[:-1] - cv * lin[I]
        upper = fwd[1:]
        lower = bwd[:-1]
        rhs = -cv * const[I]
        rhs[0] -= lower[0] * c_old[0]
        rhs[-1] -= upper[-1] * c_old[-1]
        ab = np.zeros((3, N - 2))
        ab[0, 1:] = upper[:-1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        out = c_old.copy()
        out[I] = solve_banded((1, 1), ab, rhs, check_finite=False)
        return out

    # ------------------------------------------------------------- currents

    def edge_currents(self, st):
        """Physical conduction current densities (A/cm^2) per edge: Jn, Jp."""
        jn, jp = self.fluxes(st)
        return jn * self.j0, jp * self.j0

    def efield(self, psi):
        """Field per edge in V/cm from scaled potential."""
        return -np.diff(psi) * self.vt / (self.h * self.ld)
