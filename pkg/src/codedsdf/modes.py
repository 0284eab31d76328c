"""Linear tetrahedral FEM assembly and modal basis extraction.

The deformation code for a volumetric object is the projection of its
rigid-aligned displacement onto the lowest non-rigid eigenmodes of
K phi = lambda M phi at rest. Columns of the stored basis are re-orthonormalized
(Euclidean) so that the plain-transpose projection is an exact least-squares
fit, which makes the code/displacement round trip testable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import FormatError, NumericError
from .geom import RigidTransform, TetMesh, kabsch_align

BASIS_MAGIC = b"NCMB"
BASIS_VERSION = 1


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic linear elastic material."""

    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if self.density <= 0:
            raise ValueError("density must be positive")

    @property
    def lame(self) -> tuple[float, float]:
        e, nu = self.youngs_modulus, self.poisson_ratio
        mu = e / (2.0 * (1.0 + nu))
        lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return lam, mu


@dataclass(frozen=True)
class FemSystem:
    """Assembled stiffness (sparse CSR, 3n x 3n) and lumped mass diagonal."""

    stiffness: scipy.sparse.csr_matrix
    mass_diag: np.ndarray

    @property
    def ndof(self) -> int:
        return len(self.mass_diag)


@dataclass(frozen=True)
class ModalBasis:
    """Euclidean-orthonormal mode matrix (3n x m) with ascending eigenvalues."""

    matrix: np.ndarray
    eigenvalues: np.ndarray

    @property
    def num_modes(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.matrix.shape[0] // 3


def _tet_strain_matrix(grads: np.ndarray) -> np.ndarray:
    """6x12 Voigt strain-displacement matrix from the four shape gradients."""
    b = np.zeros((6, 12))
    for i in range(4):
        gx, gy, gz = grads[i]
        c = 3 * i
        b[0, c] = gx
        b[1, c + 1] = gy
        b[2, c + 2] = gz
        b[3, c] = gy
        b[3, c + 1] = gx
        b[4, c + 1] = gz
        b[4, c + 2] = gy
        b[5, c] = gz
        b[5, c + 2] = gx
    return b


def _elasticity_matrix(lam: float, mu: float) -> np.ndarray:
    d = np.zeros((6, 6))
    d[:3, :3] = lam
    d[0, 0] = d[1, 1] = d[2, 2] = lam + 2.0 * mu
    d[3, 3] = d[4, 4] = d[5, 5] = mu
    return d


def assemble_fem_system(mesh: TetMesh, mat: MaterialParams) -> FemSystem:
    """Constant-strain tetrahedra stiffness and row-sum lumped mass."""
    lam, mu = mat.lame
    d_mat = _elasticity_matrix(lam, mu)
    verts, tets = mesh.vertices, mesh.tets
    n_dof = 3 * mesh.num_vertices

    rows = np.empty(144 * len(tets), np.int64)
    cols = np.empty(144 * len(tets), np.int64)
    vals = np.empty(144 * len(tets), np.float64)
    mass = np.zeros(n_dof, np.float64)
    for e, tet in enumerate(tets):
        x = verts[tet]
        dm = (x[1:] - x[0]).T  # columns are edge vectors
        vol = np.linalg.det(dm) / 6.0
        if vol <= 0:
            raise NumericError(f"inverted tet {e} during assembly")
        dinv = np.linalg.inv(dm)
        grads = np.vstack([-dinv.sum(axis=0), dinv])  # (4,3) shape gradients
        ke = vol * _tet_strain_matrix(grads).T @ d_mat @ _tet_strain_matrix(grads)
        dof = np.repeat(3 * tet, 3) + np.tile([0, 1, 2], 4)
        base = 144 * e
        rows[base : base + 144] = np.repeat(dof, 12)
        cols[base : base + 144] = np.tile(dof, 12)
        vals[base : base + 144] = ke.ravel()
        mass[dof] += mat.density * vol / 4.0

    k = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n_dof, n_dof)).tocsr()
    k = 0.5 * (k + k.T)  # symmetrize away accumulation round-off
    return FemSystem(k, mass)


def compute_linear_modes(sys: FemSystem, m: int, eps_rigid_rel: float = 1e-6) -> ModalBasis:
    """Lowest m non-rigid eigenmodes of K phi = lambda M phi.

    The diagonal mass reduces the problem to an ordinary symmetric
    eigensolve; the six rigid modes (eigenvalues below eps_rigid_rel times
    the first elastic eigenvalue) are discarded and the retained block is
    QR-orthonormalized with canonical signs.
    """
    n_dof = sys.ndof
    if not 1 <= m <= n_dof - 6:
        raise NumericError(f"mode count {m} out of range [1, {n_dof - 6}]")
    s = 1.0 / np.sqrt(sys.mass_diag)
    a = sys.stiffness.toarray()
    a *= s[:, None]
    a *= s[None, :]
    a = 0.5 * (a + a.T)
    w, y = scipy.linalg.eigh(a, subset_by_index=[0, 5 + m])

    lam7 = w[6]
    if lam7 <= 0:
        raise NumericError("mesh has more than 6 zero-energy modes (mechanism?)")
    rigid = int(np.sum(w < eps_rigid_rel * lam7))
    if rigid != 6:
        raise NumericError(
            f"expected 6 rigid modes, found {rigid} "
            f"(eigenvalues {w[:8]}, threshold {eps_rigid_rel * lam7:g})"
        )

    phi = s[:, None] * y[:, 6 : 6 + m]
    eigenvalues = w[6 : 6 + m].copy()
    k_phi = sys.stiffness @ phi
    resid = k_phi - sys.mass_diag[:, None] * phi * eigenvalues[None, :]
    rel = np.linalg.norm(resid, axis=0) / np.linalg.norm(k_phi, axis=0)
    if (rel > 1e-6).any():
        raise NumericError(f"eigen residual too large: max {rel.max():g}")

    # Deflate the Euclidean rigid content. The eigenvectors are only
    # M-orthogonal to the rigid modes, but the rigid alignment in the encoder
    # removes the Euclidean least-squares rigid fit; without deflation that
    # fit would bleed into the code. After deflation, aligning X + U c is a
    # no-op and the code/coefficient round trip is exact.
    rigid = s[:, None] * y[:, :6]
    q_rigid, _ = np.linalg.qr(rigid)
    phi = phi - q_rigid @ (q_rigid.T @ phi)

    # Canonical signs, then Euclidean orthonormalization.
    flips = np.sign(phi[np.abs(phi).argmax(axis=0), np.arange(m)])
    phi *= flips[None, :]
    q, r = np.linalg.qr(phi)
    q *= np.sign(np.diag(r))[None, :]
    return ModalBasis(q, eigenvalues)


def encode_fem(x: np.ndarray, rest: np.ndarray, basis: ModalBasis) -> tuple[np.ndarray, RigidTransform]:
    """Deformation code of a full-space pose.

    Rigidly aligns the pose onto the rest shape, then projects the residual
    displacement onto the basis. The alignment is returned as well: runtime
    queries must be mapped into the same aligned frame.
    """
    x = np.asarray(x, np.float64)
    rest = np.asarray(rest, np.float64)
    if x.shape != rest.shape:
        raise ValueError(f"pose shape {x.shape} != rest shape {rest.shape}")
    align = kabsch_align(x, rest)
    disp = (align.apply(x) - rest).ravel()
    return basis.matrix.T @ disp, align


def reconstruct_displacement(basis: ModalBasis, z: np.ndarray) -> np.ndarray:
    """Displacement field (n,3) represented by a code."""
    return (basis.matrix @ np.asarray(z, np.float64)).reshape(-1, 3)


def save_basis(path, basis: ModalBasis) -> None:
    """magic 'NCMB', version byte, n (i64), m (i64), eigenvalues (m f64),
    then the basis matrix column-major (f64), all little-endian."""
    n, m = basis.num_vertices, basis.num_modes
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<B", BASIS_VERSION))
        fh.write(struct.pack("<qq", n, m))
        fh.write(basis.eigenvalues.astype("<f8").tobytes())
        fh.write(np.asfortranarray(basis.matrix.astype("<f8")).tobytes(order="F"))


def load_basis(path) -> ModalBasis:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 21:
        raise FormatError(f"{path}: file too short")
    if data[:4] != BASIS_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version = data[4]
    if version != BASIS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n, m = struct.unpack("<qq", data[5:21])
    need = 21 + 8 * m + 8 * 3 * n * m
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    eigenvalues = np.frombuffer(data, "<f8", count=m, offset=21).copy()
    mat = np.frombuffer(data, "<f8", count=3 * n * m, offset=21 + 8 * m)
    return ModalBasis(mat.reshape((3 * n, m), order="F").copy(), eigenvalues)
