"""Ideal backbone construction from torsion angles (NeRF placement).

Used to build helix/strand fixtures and the synthetic toy corpus.
"""

from __future__ import annotations

import numpy as np

# Engh & Huber ideal values (angstrom / degrees)
N_CA = 1.458
CA_C = 1.525
C_N = 1.329
C_O = 1.231
ANG_N_CA_C = 111.2
ANG_CA_C_N = 116.2
ANG_C_N_CA = 121.7
ANG_CA_C_O = 120.5

HELIX_PHI_PSI = (-57.0, -47.0)
STRAND_PHI_PSI = (-139.0, 135.0)


def place(a: np.ndarray, b: np.ndarray, c: np.ndarray, bond: float, angle_deg: float,
          torsion_deg: float) -> np.ndarray:
    """Position of atom d given a-b-c, |cd|, angle b-c-d and torsion a-b-c-d."""
    angle = np.deg2rad(angle_deg)
    torsion = np.deg2rad(torsion_deg)
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-bond * np.cos(angle),
                   bond * np.sin(angle) * np.cos(torsion),
                   bond * np.sin(angle) * np.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def build_backbone(phi: np.ndarray, psi: np.ndarray, omega: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Backbone N, CA, C, O coordinates for the given per-residue torsions (degrees).

    ``phi[0]`` and ``psi[-1]`` are ignored except that ``psi[-1]`` orients the
    last carbonyl oxygen.
    """
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n = len(phi)
    omega = np.full(n, 180.0) if omega is None else np.asarray(omega, dtype=np.float64)
    N = np.zeros((n, 3))
    CA = np.zeros((n, 3))
    C = np.zeros((n, 3))
    O = np.zeros((n, 3))
    N[0] = [0.0, 0.0, 0.0]
    CA[0] = [N_CA, 0.0, 0.0]
    ang = np.deg2rad(180.0 - ANG_N_CA_C)
    C[0] = CA[0] + CA_C * np.array([np.cos(ang), np.sin(ang), 0.0])
    for i in range(1, n):
        N[i] = place(N[i - 1], CA[i - 1], C[i - 1], C_N, ANG_CA_C_N, psi[i - 1])
        CA[i] = place(CA[i - 1], C[i - 1], N[i], N_CA, ANG_C_N_CA, omega[i - 1])
        C[i] = place(C[i - 1], N[i], CA[i], CA_C, ANG_N_CA_C, phi[i])
    for i in range(n):
        # carbonyl O sits trans to the following N in the peptide plane
        O[i] = place(N[i], CA[i], C[i], C_O, ANG_CA_C_O, psi[i] + 180.0)
    return {"N": N, "CA": CA, "C": C, "O": O}


def ideal_helix(n: int) -> dict[str, np.ndarray]:
    phi, psi = HELIX_PHI_PSI
    return build_backbone(np.full(n, phi), np.full(n, psi))


def ideal_strand(n: int) -> dict[str, np.ndarray]:
    phi, psi = STRAND_PHI_PSI
    return build_backbone(np.full(n, phi), np.full(n, psi))


def rigid_transform(coords: dict[str, np.ndarray], R: np.ndarray, t: np.ndarray) -> dict[str, np.ndarray]:
    return {k: v @ R.T + t for k, v in coords.items()}


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random proper rotation (QR of a Gaussian matrix, sign-fixed)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def antiparallel_pair(n: int, gap: float = 2.9) -> dict[str, np.ndarray]:
    """Two ideal extended strands of ``n`` residues each, antiparallel and H-bonded.

    The second strand is the first rotated 180 degrees about the sheet normal,
    positioned so the inward-facing carbonyl O of the middle residue sits
    ``gap`` angstrom from the partner's amide N. Returned arrays have 2n rows
    (strand 1 then strand 2, strand 2 listed N->C).
    """
    a = ideal_strand(n)
    ca = a["CA"]
    axis = ca[-1] - ca[0]
    axis /= np.linalg.norm(axis)
    # in-sheet direction: alternating carbonyl directions, perpendicular to axis
    co = a["O"] - a["C"]
    co -= np.outer(co @ axis, axis)
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    y = (co * signs[:, None]).sum(axis=0)
    y /= np.linalg.norm(y)
    z = np.cross(axis, y)
    frame = np.stack([axis, y, z])  # rows: local x, y, z
    local = {k: (v - ca[0]) @ frame.T for k, v in a.items()}
    mid = n // 2 if (n // 2) % 2 == 0 else n // 2 - 1  # residue whose C=O points +y
    x0 = local["CA"][mid, 0]
    # rotate 180 deg about local z through (x0, yc): (x, y, z) -> (2x0 - x, 2yc - y, z)
    # choose yc so O(mid) lands `gap` from its image N(mid)
    o, nn = local["O"][mid], local["N"][mid]

    def image(p, yc):
        return np.array([2 * x0 - p[0], 2 * yc - p[1], p[2]])

    lo, hi = o[1], o[1] + 10.0
    for _ in range(100):
        yc = 0.5 * (lo + hi)
        if np.linalg.norm(image(nn, yc) - o) < gap:
            lo = yc
        else:
            hi = yc
    yc = 0.5 * (lo + hi)
    second = {k: np.stack([image(p, yc) for p in v]) for k, v in local.items()}
    return {k: np.concatenate([local[k], second[k]]) for k in local}
