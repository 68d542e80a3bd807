"""
Benchmark problem generators and the global direct-solve oracle.

Presets
-------
``laminated_beam``      1 x 9 subdomains, seven horizontal layers each
``grid3x3_layered``     3 x 3 subdomains, seven layers alternating across the whole domain
``grid4x4_inclusion``   4 x 4 subdomains, each with a centred stiff inclusion
``mbb_snapshot``        12 x 8 modular MBB beam, densities from a SIMP loop

Academic presets use a two-phase material: density 1 is the stiff phase (E0) and
density 0 the compliant one (E0 / contrast), obtained with a linear interpolation
(``p = 1``, ``Emin = E0 / contrast``).
"""
import logging
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .decomposition import build_partition, select_corners
from .errors import SingularGlobal, StateSolveFailed
from .fem import Material, assemble_subdomain, simp_modulus, traction_load, unit_element_stiffness

logger = logging.getLogger(__name__)

DEFAULT_CONTRAST = 1e4
DEFAULT_TRACTION = (1.0, 1.0)


@dataclass
class ProblemSpec:
    """
    A complete benchmark instance.

    ``densities[s]`` is the ``(ey, ex)`` element density grid of subdomain ``s``
    (subdomains ordered ``s = j * sx + i``). ``dirichlet`` holds
    ``(global node, direction, value)``, ``tractions`` holds
    ``(subdomain, edge, (tx, ty))`` and ``point_loads`` ``(global node, direction, value)``.
    """
    name: str
    sx: int
    sy: int
    ex: int
    ey: int
    material: Material
    densities: list
    module_types: np.ndarray
    dirichlet: list = field(default_factory=list)
    tractions: list = field(default_factory=list)
    point_loads: list = field(default_factory=list)
    contrast: float = 1.0
    size: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def n_subdomains(self):
        return self.sx * self.sy

    def module_grid(self):
        return np.asarray(self.module_types).reshape(self.sy, self.sx).T

    def global_density(self):
        """``(sy*ey, sx*ex)`` density grid of the whole domain, row 0 at the bottom."""
        out = np.empty((self.sy * self.ey, self.sx * self.ex))
        for s, rho in enumerate(self.densities):
            i, j = s % self.sx, s // self.sx
            out[j * self.ey:(j + 1) * self.ey, i * self.ex:(i + 1) * self.ex] = rho
        return out

    def partition(self):
        return build_partition(self.sx, self.sy, (self.ex, self.ey), self.module_grid(), self.size)


def build_subdomains(problem, partition=None):
    """Assemble every subdomain with its traction and point loads."""
    part = partition if partition is not None else problem.partition()
    subs = []
    for s, mesh in enumerate(part.meshes):
        sd = assemble_subdomain(mesh, problem.densities[s], problem.material,
                                int(problem.module_types[s]))
        subs.append(sd)
    loads = [sd.load.copy() for sd in subs]
    for s, edge, t in problem.tractions:
        loads[s] += traction_load(part.meshes[s], edge, t)
    for node, d, value in problem.point_loads:
        s, local = sorted(part.owners[int(node)])[0]
        loads[s][2 * local + int(d)] += value
    return part, [sd.with_load(f) for sd, f in zip(subs, loads)]


def _academic_material(contrast, nu=0.3):
    if contrast == 1.0:
        return Material(nu=nu)
    return Material(E0=1.0, Emin=1.0 / contrast, nu=nu, p=1.0)


def _clamp_left_and_load_right(sx, sy, ex, ey, traction):
    gnx = sx * ex
    dirichlet = []
    for gj in range(sy * ey + 1):
        node = gj * (gnx + 1)
        dirichlet += [(node, 0, 0.0), (node, 1, 0.0)]
    tractions = [((j * sx + sx - 1), "right", tuple(traction)) for j in range(sy)]
    return dirichlet, tractions


GRID_LAYOUTS = ("global", "aligned", "checkerboard")


def _layers(ex, ey, n_layers, vertical=False):
    """Stiff (1) / compliant (0) layer pattern; outer layers stiff, assignment by element centroid."""
    n = ex if vertical else ey
    layer = np.floor(n_layers * (np.arange(n) + 0.5) / n).astype(int)
    stiff = (layer % 2 == 0).astype(float)
    return np.tile(stiff, (ey, 1)) if vertical else np.tile(stiff[:, None], (1, ex))


def laminated_beam(elems=8, contrast=DEFAULT_CONTRAST, n_subdomains=9, n_layers=7,
                   traction=DEFAULT_TRACTION):
    """Row of square subdomains, each with ``n_layers`` alternating horizontal layers."""
    if n_layers % 2 == 0:
        raise ValueError("layer count must be odd")
    ex = ey = int(elems)
    rho = np.ones((ey, ex)) if contrast == 1.0 else _layers(ex, ey, n_layers)
    dirichlet, tractions = _clamp_left_and_load_right(n_subdomains, 1, ex, ey, traction)
    return ProblemSpec("laminated_beam", n_subdomains, 1, ex, ey, _academic_material(contrast),
                       [rho.copy() for _ in range(n_subdomains)],
                       np.zeros(n_subdomains, dtype=np.int64), dirichlet, tractions, [],
                       float(contrast), meta={"n_layers": n_layers})


def grid3x3_layered(elems=8, contrast=DEFAULT_CONTRAST, n=3, n_layers=7, traction=DEFAULT_TRACTION,
                    layout="global"):
    """
    ``n x n`` grid of layered subdomains.

    ``layout`` picks how the horizontal layers of neighbouring subdomains relate:

    ``"global"``
        the stiff/compliant alternation continues across subdomain rows, so with an
        odd layer count every other row of subdomains starts with a compliant layer;
    ``"aligned"``
        every subdomain is identical (no stiffness jump on any interface);
    ``"checkerboard"``
        layer orientation switches between horizontal and vertical like a checkerboard.
    """
    if layout not in GRID_LAYOUTS:
        raise ValueError(f"layout must be one of {GRID_LAYOUTS}, got {layout!r}")
    ex = ey = int(elems)
    dens, types = [], []
    for s in range(n * n):
        i, j = s % n, s // n
        if contrast == 1.0:
            rho, t = np.ones((ey, ex)), 0
        elif layout == "checkerboard":
            t = (i + j) % 2
            rho = _layers(ex, ey, n_layers, vertical=bool(t))
        else:
            t = j % 2 if layout == "global" and n_layers % 2 else 0
            rho = _layers(ex, ey, n_layers)
            rho = 1.0 - rho if t else rho
        dens.append(rho)
        types.append(t)
    dirichlet, tractions = _clamp_left_and_load_right(n, n, ex, ey, traction)
    return ProblemSpec("grid3x3_layered", n, n, ex, ey, _academic_material(contrast), dens,
                       np.array(types, dtype=np.int64), dirichlet, tractions, [], float(contrast),
                       meta={"n_layers": n_layers, "layout": layout})


def grid4x4_inclusion(elems=8, contrast=DEFAULT_CONTRAST, n=4, inclusion=None,
                      traction=DEFAULT_TRACTION):
    """
    ``n x n`` subdomains with a centred square stiff inclusion of ``inclusion``
    elements per side (default ``elems // 2``); the boundary ring stays compliant.
    """
    ex = ey = int(elems)
    size = ex // 2 if inclusion is None else int(inclusion)
    if size < 0 or size > ex - 2 or (ex - size) % 2:
        raise ValueError(f"inclusion of {size} elements does not fit centred inside {ex}")
    rho = np.zeros((ey, ex))
    lo = (ex - size) // 2
    rho[lo:lo + size, lo:lo + size] = 1.0
    if contrast == 1.0 or size == 0:
        rho = np.ones((ey, ex)) if contrast == 1.0 else rho
    dirichlet, tractions = _clamp_left_and_load_right(n, n, ex, ey, traction)
    return ProblemSpec("grid4x4_inclusion", n, n, ex, ey, _academic_material(contrast),
                       [rho.copy() for _ in range(n * n)], np.zeros(n * n, dtype=np.int64),
                       dirichlet, tractions, [], float(contrast), meta={"inclusion": size})


# ---------------------------------------------------------------------------
# global assembly and direct oracle


def assemble_global(problem, partition=None, subdomains=None):
    """Global stiffness and load with interface nodes merged (no supports applied)."""
    if subdomains is None:
        partition, subdomains = build_subdomains(problem, partition)
    n = partition.n_global_dofs
    rows, cols, vals = [], [], []
    f = np.zeros(n)
    for s, sd in enumerate(subdomains):
        g = partition.global_dofs(s)
        k = sd.stiffness.tocoo()
        rows.append(g[k.row])
        cols.append(g[k.col])
        vals.append(k.data)
        np.add.at(f, g, sd.load)
    k = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return partition, subdomains, k, f


def solve_global(k, f, dirichlet):
    """Eliminate prescribed DOFs and solve with a sparse direct factorization."""
    n = k.shape[0]
    fixed = np.array(sorted({2 * int(nd) + int(d) for nd, d, _ in dirichlet}), dtype=np.int64)
    if len(fixed) == 0:
        raise SingularGlobal("no supports: global stiffness is singular")
    u = np.zeros(n)
    for nd, d, v in dirichlet:
        u[2 * int(nd) + int(d)] = v
    free = np.setdiff1d(np.arange(n), fixed)
    kff = k[free][:, free].tocsc()
    rhs = f[free] - k[free][:, fixed] @ u[fixed]
    try:
        lu = spla.splu(kff)
    except RuntimeError as exc:
        raise SingularGlobal(str(exc)) from exc
    u[free] = lu.solve(rhs)
    res = np.linalg.norm(kff @ u[free] - rhs)
    scale = np.linalg.norm(rhs)
    if not np.all(np.isfinite(u)) or (scale > 0 and res > 1e-8 * scale):
        raise SingularGlobal(f"direct solve residual {res:.3e} relative to {scale:.3e}")
    return u


def direct_oracle(problem, partition=None, subdomains=None):
    """Global reference displacement, shape ``(n_global_dofs,)``."""
    partition, subdomains, k, f = assemble_global(problem, partition, subdomains)
    return solve_global(k, f, problem.dirichlet)


def scatter_to_subdomains(partition, u):
    return [u[partition.global_dofs(s)] for s in range(partition.n_subdomains)]


def gather_from_subdomains(partition, us):
    """Average subdomain copies onto global DOFs."""
    n = partition.n_global_dofs
    acc, cnt = np.zeros(n), np.zeros(n)
    for s, u in enumerate(us):
        g = partition.global_dofs(s)
        np.add.at(acc, g, u)
        np.add.at(cnt, g, 1.0)
    return acc / np.maximum(cnt, 1.0)


def relative_error(partition, us, u_ref):
    """Relative L2 error of subdomain displacements against the global oracle."""
    ref = scatter_to_subdomains(partition, u_ref)
    num = sum(float(np.sum((a - b) ** 2)) for a, b in zip(us, ref))
    den = sum(float(np.sum(b ** 2)) for b in ref)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


# ---------------------------------------------------------------------------
# modular MBB beam and a minimal SIMP loop


@dataclass
class SimpSettings:
    volfrac: float = 0.5
    filter_radius: float = 1.5
    move: float = 0.2
    damping: float = 0.5
    rho_min: float = 0.0
    bisection_tol: float = 1e-12


@dataclass
class SimpState:
    density: np.ndarray
    compliance: float
    iteration: int
    volfrac: float
    filter_radius: float
    move: float


def default_module_layout():
    """12 x 8 grid (indexed [column, row]) of module labels 1..16, mirror symmetric in x."""
    text = resources.files("fetibench.data").joinpath("mbb_modules.txt").read_text()
    rows = [list(map(int, line.split())) for line in text.splitlines()
            if line.strip() and not line.startswith("#")]
    grid = np.array(rows[::-1])  # file lists the top row first
    return grid.T


def mbb_problem(elems=8, module_layout=None, material=None, sx=12, sy=8):
    """Geometry, supports and load of the modular MBB beam, uniform density 1."""
    layout = default_module_layout() if module_layout is None else np.asarray(module_layout)
    if layout.shape != (sx, sy):
        raise ValueError(f"module layout must have shape {(sx, sy)}")
    mat = material or Material()
    ex = ey = int(elems)
    gnx, gny = sx * ex, sy * ey
    bl, br = 0, gnx
    dirichlet = [(bl, 0, 0.0), (bl, 1, 0.0), (br, 0, 0.0), (br, 1, 0.0)]
    if gnx % 2:
        raise ValueError("midspan node requires an even number of elements along x")
    top_mid = gny * (gnx + 1) + gnx // 2
    types = np.array([layout[s % sx, s // sx] for s in range(sx * sy)], dtype=np.int64)
    dens = [np.ones((ey, ex)) for _ in range(sx * sy)]
    return ProblemSpec("mbb", sx, sy, ex, ey, mat, dens, types, dirichlet, [],
                       [(top_mid, 1, -1.0)], contrast=mat.E0 / mat.Emin)


def _filter_matrix(nx, ny, radius):
    """Linear-hat sensitivity filter weights on an ``ny x nx`` element grid (row-major)."""
    r = int(np.ceil(radius)) - 1
    rows, cols, vals = [], [], []
    ey, ex = np.divmod(np.arange(nx * ny), nx)
    for dj in range(-r, r + 1):
        for di in range(-r, r + 1):
            w = radius - np.hypot(di, dj)
            if w <= 0:
                continue
            ok = (ex + di >= 0) & (ex + di < nx) & (ey + dj >= 0) & (ey + dj < ny)
            e = np.flatnonzero(ok)
            rows.append(e)
            cols.append(e + dj * nx + di)
            vals.append(np.full(len(e), w))
    h = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * ny, nx * ny)).tocsr()
    return h, np.asarray(h.sum(axis=1)).ravel()


class ModularSimp:
    """
    Compliance minimization with one density field per module type.

    Each iteration solves the global state problem directly, filters the
    sensitivities on the global element grid, averages them over all occurrences
    of each module type and applies an optimality-criteria update.
    """

    def __init__(self, base, settings=None):
        self.base = base
        self.settings = settings or SimpSettings()
        self.types = np.unique(base.module_types)
        self.partition = base.partition()
        ex, ey, sx = base.ex, base.ey, base.sx
        self.gnx, self.gny = base.sx * ex, base.sy * ey
        # global element index for (subdomain, local element)
        self.elem_map = []
        for s in range(base.n_subdomains):
            i, j = s % sx, s // sx
            lj, li = np.divmod(np.arange(ex * ey), ex)
            self.elem_map.append((j * ey + lj) * self.gnx + i * ex + li)
        self.filter, self.filter_sum = _filter_matrix(self.gnx, self.gny, self.settings.filter_radius)
        self.counts = {t: int(np.sum(base.module_types == t)) for t in self.types}
        self.ke = unit_element_stiffness(base.material, self.partition.hx, self.partition.hy)
        self.fields = {t: np.full(ex * ey, self.settings.volfrac) for t in self.types}
        self.iteration = 0
        self.history = []

    def problem(self):
        """Current design as a :class:`ProblemSpec`."""
        dens = [self.fields[t].reshape(self.base.ey, self.base.ex).copy() for t in self.base.module_types]
        return replace(self.base, name=f"mbb_snapshot_{self.iteration}", densities=dens,
                       meta={**self.base.meta, "simp_iteration": self.iteration})

    def global_rho(self):
        rho = np.empty(self.gnx * self.gny)
        for s, t in enumerate(self.base.module_types):
            rho[self.elem_map[s]] = self.fields[t]
        return rho

    def volume(self):
        total = sum(self.counts[t] * self.fields[t].sum() for t in self.types)
        return total / (self.gnx * self.gny)

    def _state(self):
        prob = self.problem()
        try:
            part, subs, k, f = assemble_global(prob, self.partition)
            u = solve_global(k, f, prob.dirichlet)
        except Exception as exc:  # noqa: BLE001 - reported with the iteration index
            raise StateSolveFailed(self.iteration, str(exc)) from exc
        return u, float(f @ u)

    def _element_energy(self, u):
        gnx = self.gnx
        ej, ei = np.divmod(np.arange(self.gnx * self.gny), gnx)
        n0 = ej * (gnx + 1) + ei
        nodes = np.column_stack([n0, n0 + 1, n0 + gnx + 2, n0 + gnx + 1])
        dofs = np.empty((len(n0), 8), dtype=np.int64)
        dofs[:, 0::2], dofs[:, 1::2] = 2 * nodes, 2 * nodes + 1
        ue = u[dofs]
        return np.einsum("ei,ij,ej->e", ue, self.ke, ue)

    def step(self):
        """One analysis + OC update; returns the compliance of the design before the update."""
        st, mat = self.settings, self.base.material
        u, compliance = self._state()
        rho = self.global_rho()
        dc = -mat.p * rho ** (mat.p - 1) * (mat.E0 - mat.Emin) * self._element_energy(u)
        dc = (self.filter @ (rho * dc)) / (np.maximum(1e-3, rho) * self.filter_sum)
        sens = {}
        for t in self.types:
            occ = [self.elem_map[s] for s in np.flatnonzero(self.base.module_types == t)]
            sens[t] = np.mean([dc[e] for e in occ], axis=0)
        target = st.volfrac * self.gnx * self.gny
        lo, hi = 0.0, 1e9
        new = self.fields
        while (hi - lo) / (hi + lo) > st.bisection_tol:
            mid = 0.5 * (lo + hi)
            cand = {}
            for t in self.types:
                x = self.fields[t]
                b = np.sqrt(np.maximum(-sens[t], 0.0) / mid) ** (2 * st.damping)
                xn = np.clip(x * b, x - st.move, x + st.move)
                cand[t] = np.clip(xn, st.rho_min, 1.0)
            vol = sum(self.counts[t] * cand[t].sum() for t in self.types)
            if vol > target:
                lo = mid
            else:
                hi = mid
            new = cand
        self.fields = new
        self.history.append(compliance)
        self.iteration += 1
        return compliance

    def compliance(self):
        return self._state()[1]

    def state(self):
        return SimpState(self.global_rho(), self.compliance(), self.iteration,
                         self.settings.volfrac, self.settings.filter_radius, self.settings.move)


def mbb_modular_snapshot(iterations_wanted, elems=8, module_layout=None, material=None,
                         settings=None):
    """Run the modular SIMP loop and return a :class:`ProblemSpec` per requested iteration."""
    wanted = sorted(set(int(i) for i in iterations_wanted))
    opt = ModularSimp(mbb_problem(elems, module_layout, material), settings)
    out = {}
    while True:
        if opt.iteration in wanted:
            out[opt.iteration] = opt.problem()
        if not wanted or opt.iteration >= wanted[-1]:
            break
        c = opt.step()
        logger.info("SIMP iteration %d compliance %.6e volume %.6f", opt.iteration, c, opt.volume())
    return [out[i] for i in sorted(set(int(i) for i in iterations_wanted))]


PRESETS = {
    "laminated_beam": laminated_beam,
    "grid3x3_layered": grid3x3_layered,
    "grid4x4_inclusion": grid4x4_inclusion,
}


def corners_for(problem, partition=None):
    return select_corners(partition if partition is not None else problem.partition())
