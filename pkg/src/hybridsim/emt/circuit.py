"""Node-level transient solver with trapezoidal companion models.

Every element is a group of ``m`` conductors (``m`` = 1 or 3) connecting
terminal nodes ``p`` to ``q``.  A conductor's voltage is
``coef * v[p] - v[q]``; ``coef`` models an ideal ratio transformer on the
``p`` side.  After discretisation each conductor obeys

    i_n = G u_n + Hu u_{n-1} + Hi i_{n-1}

so the per-step update of the history vector ``h`` and all recorded outputs
are one affine map of ``(h, known node voltages)``.  Those maps are cached
per switch configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GROUND = None


class SingularNetworkError(RuntimeError):
    """The nodal matrix cannot be factorised (floating sub-network)."""


@dataclass
class _Element:
    name: str
    kind: str  # "R", "RL", "C", "SW"
    p: list
    q: list
    coef: float
    r: np.ndarray | None = None
    l: np.ndarray | None = None
    c: np.ndarray | None = None
    r_closed: np.ndarray | None = None
    closed: np.ndarray | None = None
    offset: int = 0

    @property
    def size(self) -> int:
        return len(self.p)


def _as_matrix(x, m):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.eye(m) * float(x)
    if x.ndim == 1:
        return np.diag(x)
    return x


class Circuit:
    def __init__(self, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.dt = dt
        self.nodes: dict[str, int] = {}
        self.known: dict[str, int] = {}
        self.elements: dict[str, _Element] = {}
        self._compiled = False
        self._cache: dict = {}
        self.h: np.ndarray | None = None
        self.pending_open: dict[tuple[str, int], float] = {}
        self.monitored: list[str] = []

    # -- construction ------------------------------------------------------
    def add_node(self, name: str) -> str:
        if name in self.nodes or name in self.known:
            raise ValueError(f"duplicate node {name}")
        self.nodes[name] = len(self.nodes)
        self._compiled = False
        return name

    def add_known(self, name: str) -> str:
        if name in self.nodes or name in self.known:
            raise ValueError(f"duplicate node {name}")
        self.known[name] = len(self.known)
        self._compiled = False
        return name

    def _add(self, el: _Element):
        if el.name in self.elements:
            raise ValueError(f"duplicate element {el.name}")
        if len(el.p) != len(el.q):
            raise ValueError("terminal lists differ in length")
        for n in (*el.p, *el.q):
            if n is not GROUND and n not in self.nodes and n not in self.known:
                raise ValueError(f"unknown node {n}")
        self.elements[el.name] = el
        self._compiled = False

    def add_r(self, name, p, q, r, coef: float = 1.0):
        m = len(p)
        self._add(_Element(name, "R", list(p), list(q), coef, r=_as_matrix(r, m)))

    def add_rl(self, name, p, q, r, l, coef: float = 1.0):
        m = len(p)
        self._add(_Element(name, "RL", list(p), list(q), coef, r=_as_matrix(r, m), l=_as_matrix(l, m)))

    def add_c(self, name, p, q, c, coef: float = 1.0):
        m = len(p)
        self._add(_Element(name, "C", list(p), list(q), coef, c=_as_matrix(c, m)))

    def add_switch(self, name, p, q, r_closed, closed=False):
        m = len(p)
        rc = np.broadcast_to(np.asarray(r_closed, dtype=float), (m,)).copy()
        if np.any(rc <= 0):
            raise ValueError("closed switch resistance must be positive")
        cl = np.broadcast_to(np.asarray(closed, dtype=bool), (m,)).copy()
        self._add(_Element(name, "SW", list(p), list(q), 1.0, r_closed=rc, closed=cl))

    # -- assembly ----------------------------------------------------------
    def compile(self):
        nb = 0
        for el in self.elements.values():
            el.offset = nb
            nb += el.size
        self.nb = nb
        self.nu, self.nk = len(self.nodes), len(self.known)
        au = np.zeros((nb, self.nu))
        ak = np.zeros((nb, self.nk))
        for el in self.elements.values():
            for j, (p, q) in enumerate(zip(el.p, el.q)):
                row = el.offset + j
                for node, val in ((p, el.coef), (q, -1.0)):
                    if node is GROUND:
                        continue
                    if node in self.nodes:
                        au[row, self.nodes[node]] += val
                    else:
                        ak[row, self.known[node]] += val
        self.au, self.ak = au, ak
        self._static = self._companions()
        self.hist_rows = np.array(
            [el.offset + j for el in self.elements.values() if el.kind in ("RL", "C") for j in range(el.size)],
            dtype=int,
        )
        self.switch_rows = {el.name: el.offset + np.arange(el.size)
                            for el in self.elements.values() if el.kind == "SW"}
        self._cache.clear()
        self._compiled = True
        self.h = np.zeros(self.hist_rows.size)

    def _companions(self):
        """Block matrices G, Hu, Hi for the reactive/resistive elements."""
        nb, dt = self.nb, self.dt
        g = np.zeros((nb, nb))
        hu = np.zeros((nb, nb))
        hi = np.zeros((nb, nb))
        for el in self.elements.values():
            s = slice(el.offset, el.offset + el.size)
            m = el.size
            if el.kind == "R":
                g[s, s] = np.linalg.inv(el.r)
            elif el.kind == "RL":
                gi = np.linalg.inv(el.r + 2.0 * el.l / dt)
                g[s, s] = gi
                hu[s, s] = gi
                hi[s, s] = gi @ (2.0 * el.l / dt - el.r)
            elif el.kind == "C":
                gc = 2.0 * el.c / dt
                g[s, s] = gc
                hu[s, s] = -gc
                hi[s, s] = -np.eye(m)
        return g, hu, hi

    def monitor(self, element: str):
        """Record the conductor currents of ``element`` on every step."""
        if element not in self.elements:
            raise KeyError(element)
        self.monitored.append(element)
        self._cache.clear()

    @property
    def monitored_rows(self) -> np.ndarray:
        rows = [self.elements[n].offset + np.arange(self.elements[n].size) for n in self.monitored]
        return np.concatenate(rows).astype(int) if rows else np.zeros(0, dtype=int)

    def switch_state(self) -> tuple:
        return tuple(bool(x) for el in self.elements.values() if el.kind == "SW" for x in el.closed)

    def _g_total(self) -> np.ndarray:
        g = self._static[0].copy()
        for el in self.elements.values():
            if el.kind == "SW":
                for j in range(el.size):
                    r = el.offset + j
                    g[r, r] = 1.0 / el.r_closed[j] if el.closed[j] else 0.0
        return g

    def _maps(self):
        """Affine maps ``[h; vk] -> [v; i_monitored; i_switch; h_next]`` for the current topology."""
        key = self.switch_state()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        g = self._g_total()
        _, hu, hi = self._static
        au, ak = self.au, self.ak
        y = au.T @ g @ au
        if self.nu:
            if np.linalg.cond(y) > 1e15:
                raise SingularNetworkError("nodal matrix is singular (floating sub-network?)")
            yinv = np.linalg.inv(y)
        else:
            yinv = np.zeros((0, 0))
        # expand h (history rows only) to full branch vector
        e_h = np.zeros((self.nb, self.hist_rows.size))
        e_h[self.hist_rows, np.arange(self.hist_rows.size)] = 1.0
        v_h = -yinv @ au.T @ e_h
        v_k = -yinv @ au.T @ g @ ak
        u_h = au @ v_h
        u_k = au @ v_k + ak
        i_h = g @ u_h + e_h
        i_k = g @ u_k
        hn_h = (hu @ u_h + hi @ i_h)[self.hist_rows]
        hn_k = (hu @ u_k + hi @ i_k)[self.hist_rows]
        sw = np.concatenate(list(self.switch_rows.values())).astype(int) if self.switch_rows else np.zeros(0, int)
        mon = self.monitored_rows
        top_h = np.vstack([v_h, i_h[mon], i_h[sw]])
        top_k = np.vstack([v_k, i_k[mon], i_k[sw]])
        t = np.block([[top_h, top_k], [hn_h, hn_k]])
        maps = (np.ascontiguousarray(t), y)
        self._cache[key] = maps
        return maps

    # -- state -------------------------------------------------------------
    def set_switch(self, name: str, pole: int, closed: bool):
        self.elements[name].closed[pole] = bool(closed)

    def request_open_at_zero(self, name: str, pole: int):
        """Open ``pole`` at its next current zero (checked after each step)."""
        if self.elements[name].closed[pole]:
            self.pending_open[(name, pole)] = 0.0

    def steady_state(self, vk_phasors, omega: float) -> np.ndarray:
        """Initialise history for the periodic steady state of cosine sources.

        ``vk_phasors`` are complex amplitudes ``X`` with ``v(t) = Re{X e^{j omega t}}``.
        The returned node phasors satisfy the discretised equations exactly,
        so stepping from ``t = 0`` continues the steady state without a transient.
        """
        if not self._compiled:
            self.compile()
        z_inv = np.exp(-1j * omega * self.dt)
        g = self._g_total()
        _, hu, hi = self._static
        # Effective per-conductor admittance of the discrete companion at omega.
        y_eff = np.linalg.solve(np.eye(self.nb) - hi * z_inv, g + hu * z_inv)
        au, ak = self.au, self.ak
        vk = np.asarray(vk_phasors, dtype=complex)
        y = au.T @ y_eff @ au
        rhs = -au.T @ y_eff @ ak @ vk
        if self.nu and np.linalg.cond(y) > 1e15:
            raise SingularNetworkError("nodal matrix is singular (floating sub-network?)")
        v = np.linalg.solve(y, rhs) if self.nu else np.zeros(0, dtype=complex)
        u = au @ v + ak @ vk
        i = y_eff @ u
        # h_0 from the (virtual) solution one step before t = 0.
        h_full = (hu @ u + hi @ i) * z_inv
        self.h = h_full[self.hist_rows].real.copy()
        self.ss_node_phasors = v
        self.ss_branch_phasors = (u, i)
        return v

    def step_block(self, vk: np.ndarray):
        """Advance ``len(vk)`` steps; ``vk`` holds known-node voltages per step.

        Returns node voltages ``(n, nu)`` and monitored currents ``(n, nmon)``.
        """
        if not self._compiled:
            self.compile()
        vk = np.asarray(vk, dtype=float).reshape(-1, self.nk)
        n = vk.shape[0]
        nu = self.nu
        nmon = self.monitored_rows.size
        sw_names = [(name, j) for name, rows in self.switch_rows.items() for j in range(rows.size)]
        nsw = len(sw_names)
        nh = self.h.size
        out = np.empty((n, nu + nmon))
        t, _ = self._maps()
        h = self.h
        for step in range(n):
            z = np.concatenate((h, vk[step]))
            y = t @ z
            if self.pending_open:
                isw = y[nu + nmon: nu + nmon + nsw]
                changed = False
                for key, prev in list(self.pending_open.items()):
                    cur = isw[sw_names.index(key)]
                    if prev != 0.0 and (cur == 0.0 or (cur > 0) != (prev > 0)):
                        self.set_switch(key[0], key[1], False)
                        del self.pending_open[key]
                        changed = True
                    else:
                        self.pending_open[key] = cur
                if changed:
                    t, _ = self._maps()
                    y = t @ z
            out[step] = y[: nu + nmon]
            h = y[nu + nmon + nsw:]
        assert h.size == nh
        self.h = h
        return out[:, :nu], out[:, nu:]

    def kcl_residual(self, v: np.ndarray, vk: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Nodal current mismatch for a solved step (diagnostics)."""
        g = self._g_total()
        u = self.au @ v + self.ak @ vk
        h_full = np.zeros(self.nb)
        h_full[self.hist_rows] = h
        return self.au.T @ (g @ u + h_full)
