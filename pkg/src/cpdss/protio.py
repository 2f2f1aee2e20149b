"""Protein structure/sequence I/O, 3-class secondary-structure assignment and dataset filtering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

AA_ALPHABET = "ACDEFGHIKLMNPQRSTVWY"
SS_ALPHABET = "HEC"
BACKBONE_ATOMS = ("N", "CA", "C", "O")

THREE_TO_ONE = {
    "ALA": "A", "ARG": "R", "ASN": "N", "ASP": "D", "CYS": "C", "GLN": "Q", "GLU": "E",
    "GLY": "G", "HIS": "H", "ILE": "I", "LEU": "L", "LYS": "K", "MET": "M", "PHE": "F",
    "PRO": "P", "SER": "S", "THR": "T", "TRP": "W", "TYR": "Y", "VAL": "V",
}
ONE_TO_THREE = {v: k for k, v in THREE_TO_ONE.items()}

# 8-class DSSP codes -> 3 classes
SS8_TO_SS3 = {"H": "H", "G": "H", "I": "H", "E": "E", "B": "E"}

CA_BREAK_DISTANCE = 4.2  # angstrom, consecutive CA-CA
PEPTIDE_BREAK_DISTANCE = 2.5  # angstrom, C(i-1)-N(i)
HBOND_CUTOFF = -0.5  # kcal/mol
HBOND_Q = 0.084 * 332.0


class PDBParseError(ValueError):
    pass


class EmptyProteinError(ValueError):
    pass


@dataclass
class ResidueRecord:
    chain: str
    resseq: int
    icode: str
    resname: str
    atom: str
    x: float
    y: float
    z: float
    altloc: str = " "


@dataclass
class Protein:
    """A single chain: sequence, per-residue SS labels and backbone coordinates.

    ``backbone`` maps N/CA/C/O to ``n x 3`` arrays; missing atoms are NaN rows
    (CA is always present). ``ss_seq`` is None until assigned.
    """

    id: str
    aa_seq: str
    backbone: dict[str, np.ndarray]
    ss_seq: str | None = None
    breaks: list[int] = field(default_factory=list)
    warnings: int = 0

    def __post_init__(self):
        n = len(self.aa_seq)
        for name, arr in self.backbone.items():
            if arr.shape != (n, 3):
                raise ValueError(f"{self.id}: backbone {name} has shape {arr.shape}, expected ({n}, 3)")
        if self.ss_seq is not None and len(self.ss_seq) != n:
            raise ValueError(f"{self.id}: ss_seq length {len(self.ss_seq)} != {n} residues")

    def __len__(self) -> int:
        return len(self.aa_seq)

    @property
    def ca(self) -> np.ndarray:
        return self.backbone["CA"]


# ------------------------------------------------------------------ PDB


def _field(line: str, lo: int, hi: int) -> str:
    return line[lo:hi] if len(line) >= lo else ""


def _parse_atom_line(line: str, lineno: int) -> ResidueRecord:
    try:
        resseq = int(_field(line, 22, 26))
        x = float(_field(line, 30, 38))
        y = float(_field(line, 38, 46))
        z = float(_field(line, 46, 54))
    except ValueError as exc:
        raise PDBParseError(f"line {lineno}: malformed numeric field ({exc})") from None
    return ResidueRecord(
        chain=_field(line, 21, 22) or " ",
        resseq=resseq,
        icode=(_field(line, 26, 27) or " "),
        resname=_field(line, 17, 20).strip(),
        atom=_field(line, 12, 16).strip(),
        x=x, y=y, z=z,
        altloc=_field(line, 16, 17) or " ",
    )


def find_breaks(backbone: dict[str, np.ndarray]) -> list[int]:
    """Indices i where residue i starts a new fragment (no peptide bond to i-1).

    Uses the C(i-1)-N(i) distance when both atoms exist, else CA-CA.
    """
    ca, c, n = backbone["CA"], backbone.get("C"), backbone.get("N")
    out = []
    for i in range(1, len(ca)):
        if c is not None and n is not None and np.all(np.isfinite(c[i - 1])) and np.all(np.isfinite(n[i])):
            if np.linalg.norm(n[i] - c[i - 1]) > PEPTIDE_BREAK_DISTANCE:
                out.append(i)
        elif np.linalg.norm(ca[i] - ca[i - 1]) > CA_BREAK_DISTANCE:
            out.append(i)
    return out


def parse_pdb(text: str, pid: str = "protein", chain: str | None = None, model: int = 1) -> Protein:
    """Parse ATOM records of one model/chain into a Protein.

    The first chain seen is used unless ``chain`` is given. Only blank or 'A'
    altlocs are kept. Residues without a CA are dropped.
    """
    current_model = 1
    seen_model = False
    residues: dict[tuple[int, str], dict] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        rec = line[:6]
        if rec.startswith("MODEL"):
            if seen_model:
                current_model += 1
            seen_model = True
            continue
        if rec.startswith("ENDMDL"):
            if current_model >= model:
                break
            continue
        if current_model != model or rec != "ATOM  ":
            continue
        r = _parse_atom_line(line, lineno)
        if r.altloc not in (" ", "A"):
            continue
        if chain is None:
            chain = r.chain
        if r.chain != chain:
            continue
        key = (r.resseq, r.icode)
        res = residues.setdefault(key, {"name": r.resname, "atoms": {}})
        if r.atom not in res["atoms"]:
            res["atoms"][r.atom] = (r.x, r.y, r.z)
    ordered = [residues[k] for k in sorted(residues, key=lambda k: (k[0], k[1].strip(), k[1]))]
    ordered = [r for r in ordered if "CA" in r["atoms"]]
    if not ordered:
        raise EmptyProteinError(f"{pid}: no CA atoms found")
    aa = "".join(THREE_TO_ONE.get(r["name"], "X") for r in ordered)
    backbone = {}
    for atom in BACKBONE_ATOMS:
        arr = np.full((len(ordered), 3), np.nan)
        for i, r in enumerate(ordered):
            if atom in r["atoms"]:
                arr[i] = r["atoms"][atom]
        backbone[atom] = arr
    return Protein(id=pid, aa_seq=aa, backbone=backbone, breaks=find_breaks(backbone))


def write_pdb(p: Protein, chain: str = "A") -> str:
    """Minimal ATOM-record writer (debug/fixture use)."""
    lines = []
    serial = 1
    for i, aa in enumerate(p.aa_seq):
        resname = ONE_TO_THREE.get(aa, "UNK")
        for atom in BACKBONE_ATOMS:
            xyz = p.backbone[atom][i]
            if not np.all(np.isfinite(xyz)):
                continue
            lines.append(
                f"ATOM  {serial:5d} {atom:<4s} {resname:>3s} {chain}{i + 1:4d}    "
                f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}{1.0:6.2f}{0.0:6.2f}          {atom[0]:>2s}"
            )
            serial += 1
    lines.append("END")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ secondary structure


def hydrogen_positions(backbone: dict[str, np.ndarray], breaks: list[int]) -> np.ndarray:
    """Amide H placed 1.0 A from N along unit(unit(N - C_prev) + unit(N - O_prev)).

    First residue of each fragment gets NaN (no donor).
    """
    N, C, O = backbone["N"], backbone["C"], backbone["O"]
    H = np.full_like(N, np.nan)
    starts = set(breaks) | {0}
    for i in range(1, len(N)):
        if i in starts:
            continue
        u = N[i] - C[i - 1]
        v = N[i] - O[i - 1]
        u = u / np.linalg.norm(u)
        v = v / np.linalg.norm(v)
        w = u + v
        H[i] = N[i] + w / np.linalg.norm(w)
    return H


def hbond_energy_matrix(backbone: dict[str, np.ndarray], aa_seq: str, breaks: list[int]) -> np.ndarray:
    """E[i, j]: electrostatic energy (kcal/mol) of C=O(i) accepting from N-H(j).

    Pairs with |i - j| < 2, or with a proline/missing donor H are +inf
    (never bonded). The first residue after a chain break has no H.
    """
    N, C, O = backbone["N"], backbone["C"], backbone["O"]
    H = hydrogen_positions(backbone, breaks)
    n = len(N)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_on = np.linalg.norm(O[:, None] - N[None, :], axis=-1)
        r_ch = np.linalg.norm(C[:, None] - H[None, :], axis=-1)
        r_oh = np.linalg.norm(O[:, None] - H[None, :], axis=-1)
        r_cn = np.linalg.norm(C[:, None] - N[None, :], axis=-1)
        E = HBOND_Q * (1.0 / r_on + 1.0 / r_ch - 1.0 / r_oh - 1.0 / r_cn)
    E[~np.isfinite(E)] = np.inf
    idx = np.arange(n)
    E[np.abs(idx[:, None] - idx[None, :]) < 2] = np.inf
    pro = np.array([a == "P" for a in aa_seq])
    E[:, pro] = np.inf
    return E


def assign_ss(p: Protein) -> str:
    """Simplified Kabsch-Sander assignment to {H, E, C}.

    Only alpha-helices (two consecutive i->i+4 turns mark i+1..i+4) and
    parallel/antiparallel bridges (both partners -> E) are detected; helix
    wins over strand. Residues with missing backbone atoms are C and counted
    in ``p.warnings``.
    """
    n = len(p)
    bb = p.backbone
    complete = np.all([np.all(np.isfinite(bb[a]), axis=1) for a in BACKBONE_ATOMS], axis=0)
    missing = int((~complete).sum())
    if missing:
        p.warnings += missing
        log.warning("%s: %d residues lack backbone atoms, labelled C", p.id, missing)
    labels = np.array(["C"] * n)
    if n < 3:
        return "".join(labels)
    E = hbond_energy_matrix(bb, p.aa_seq, p.breaks)
    E[~complete, :] = np.inf
    E[:, ~complete] = np.inf
    hb = E < HBOND_CUTOFF

    def bond(i, j):
        return 0 <= i < n and 0 <= j < n and hb[i, j]

    strand = np.zeros(n, dtype=bool)
    for i in range(1, n - 1):
        for j in range(i + 3, n - 1):
            parallel = (bond(i - 1, j) and bond(j, i + 1)) or (bond(j - 1, i) and bond(i, j + 1))
            anti = (bond(i, j) and bond(j, i)) or (bond(i - 1, j + 1) and bond(j - 1, i + 1))
            if parallel or anti:
                strand[i] = strand[j] = True

    frag = np.zeros(n, dtype=int)
    for b in p.breaks:
        frag[b:] += 1
    # a turn may not span a chain break
    turn = np.array([bond(i, i + 4) and frag[i] == frag[i + 4] for i in range(n)])
    helix = np.zeros(n, dtype=bool)
    for i in range(1, n):
        if turn[i - 1] and turn[i]:
            helix[i:i + 4] = True
    labels[strand] = "E"
    labels[helix] = "H"
    labels[~complete] = "C"
    return "".join(labels)


def collapse_ss8(text: str) -> str:
    return "".join(SS8_TO_SS3.get(c, "C") for c in text)


def load_ss_sidecar(p: Protein, text: str) -> Protein:
    """Replace ``p.ss_seq`` with a one-line 3- or 8-class sidecar string."""
    line = text.strip().splitlines()[0].strip() if text.strip() else ""
    ss = collapse_ss8(line)
    if len(ss) != len(p):
        raise ValueError(f"{p.id}: sidecar has {len(ss)} labels but protein has {len(p)} residues")
    p.ss_seq = ss
    return p


# ------------------------------------------------------------------ filtering


def max_run(ss: str) -> tuple[int, str]:
    best, label = 0, ""
    i = 0
    while i < len(ss):
        j = i
        while j < len(ss) and ss[j] == ss[i]:
            j += 1
        if j - i > best:
            best, label = j - i, ss[i]
        i = j
    return best, label


def filter_dataset(proteins, max_segment: int = 100):
    """Split proteins into kept and rejected (with reasons).

    A protein is rejected iff some run of one SS label is longer than
    ``max_segment`` residues.
    """
    kept, rejected = [], []
    for p in proteins:
        if p.ss_seq is None:
            raise ValueError(f"{p.id}: ss_seq not assigned")
        run, label = max_run(p.ss_seq)
        if run > max_segment:
            rejected.append((p, f"{label} run of {run} residues exceeds {max_segment}"))
        else:
            kept.append(p)
    return kept, rejected


# ------------------------------------------------------------------ FASTA


def write_fasta(sequences: dict[str, str], width: int = 60) -> str:
    out = []
    for sid, seq in sequences.items():
        out.append(f">{sid}")
        for k in range(0, len(seq), width):
            out.append(seq[k:k + width])
    return "\n".join(out) + "\n" if out else ""


def read_fasta(text: str) -> dict[str, str]:
    seqs: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            current = line[1:].split()[0] if line[1:].strip() else ""
            if current in seqs:
                raise ValueError(f"duplicate FASTA id {current!r}")
            seqs[current] = []
        elif current is None:
            raise ValueError("FASTA sequence line before any header")
        else:
            seqs[current].append(line)
    return {k: "".join(v) for k, v in seqs.items()}
