"""Synthetic tracking and pileup events, sector splitting and CSV I/O.

Detector model for tracking events: concentric barrel layers (default 10,
radii 30-1000 mm, |z| <= 3000 mm) in a uniform 2 T axial field, with
Gaussian hit smearing of 0.1 mm per coordinate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PT_THRESHOLD = 0.9          # GeV
FIELD_T = 2.0               # axial field, tesla
R_MIN, R_MAX = 30.0, 1000.0  # mm
Z_MAX = 3000.0              # mm
SMEAR_MM = 0.1
MODULE_U, MODULE_V = 40.0, 100.0  # sensor module pitch (mm) for local coordinates

TRACKING_COLUMNS = ("event_id", "hit_id", "x", "y", "z", "layer", "local_u", "local_v",
                    "particle_id", "pt")
PILEUP_COLUMNS = ("event_id", "particle_id_code", "eta", "phi", "pt", "energy", "charge",
                  "vertex", "label")
_INT_COLUMNS = {"event_id", "hit_id", "layer", "particle_id", "particle_id_code", "vertex", "label"}

# Particle-type vocabulary for pileup events.
PID_CODES = {"photon": 0, "electron": 1, "muon": 2, "pion": 3, "kaon": 4, "proton": 5,
             "neutral_hadron": 6}
PID_VOCAB = len(PID_CODES)
_CHARGED_PIDS = np.array([1, 2, 3, 4, 5])
_CHARGED_PROBS = np.array([0.05, 0.03, 0.7, 0.14, 0.08])
_NEUTRAL_PIDS = np.array([0, 6])
_NEUTRAL_PROBS = np.array([0.6, 0.4])

TRACKING_PRESETS = {"tracking-6k": 6_000, "tracking-15k": 15_000, "tracking-60k": 60_000}
PILEUP_PRESETS = {"pileup-10k": dict(n_particles=10_000, charged_frac=0.6, lv_frac=0.1, events=1000)}


class CsvFormatError(ValueError):
    """Malformed event CSV (carries the offending line number when known)."""


def to_cylindrical(x, y, z):
    """(r, phi, z) with r = sqrt(x^2 + y^2) and phi in (-pi, pi]."""
    x, y, z = (np.asarray(v, dtype=np.float64) for v in (x, y, z))
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    phi = np.where(phi <= -np.pi, np.pi, phi)
    if phi.ndim == 0:
        return float(r), float(phi), float(z)
    return r, phi, z


def to_cartesian(r, phi, z):
    r, phi = np.asarray(r, dtype=np.float64), np.asarray(phi, dtype=np.float64)
    return r * np.cos(phi), r * np.sin(phi), z


@dataclass(frozen=True)
class Hit:
    hit_id: int
    x: float
    y: float
    z: float
    layer: int
    local_u: float
    local_v: float
    particle_id: int
    pt: float

    @property
    def cylindrical(self) -> tuple:
        return to_cylindrical(self.x, self.y, self.z)


@dataclass
class TrackingEvent:
    """Column store of detector hits; ``particle_id == -1`` marks noise."""

    event_id: int
    hit_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    layer: np.ndarray
    local_u: np.ndarray
    local_v: np.ndarray
    particle_id: np.ndarray
    pt: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.hit_id)

    @property
    def n_hits(self) -> int:
        return len(self)

    @property
    def cylindrical(self):
        return to_cylindrical(self.x, self.y, self.z)

    def hits(self):
        for i in range(len(self)):
            yield Hit(int(self.hit_id[i]), float(self.x[i]), float(self.y[i]), float(self.z[i]),
                      int(self.layer[i]), float(self.local_u[i]), float(self.local_v[i]),
                      int(self.particle_id[i]), float(self.pt[i]))

    def subset(self, mask_or_index) -> "TrackingEvent":
        cols = {c: getattr(self, c)[mask_or_index] for c in TRACKING_COLUMNS if c != "event_id"}
        return TrackingEvent(self.event_id, meta=dict(self.meta), **cols)

    @property
    def labels(self) -> np.ndarray:
        return self.particle_id


@dataclass
class PileupEvent:
    """Column store of particles; ``label`` is 1 for the primary vertex."""

    event_id: int
    particle_id_code: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    pt: np.ndarray
    energy: np.ndarray
    charge: np.ndarray
    vertex: np.ndarray
    label: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.label)

    def subset(self, mask_or_index) -> "PileupEvent":
        cols = {c: getattr(self, c)[mask_or_index] for c in PILEUP_COLUMNS if c != "event_id"}
        return PileupEvent(self.event_id, meta=dict(self.meta), **cols)

    @property
    def labels(self) -> np.ndarray:
        return self.label


# -- tracking -------------------------------------------------------------------

def layer_radii(layers: int) -> np.ndarray:
    return np.linspace(R_MIN, R_MAX, layers)


def curvature_radius(pt):
    """Transverse radius of curvature in mm for pT in GeV."""
    return np.asarray(pt) / (0.3 * FIELD_T) * 1000.0


def helix_point(rho, pt, phi0, eta, charge, z0=0.0):
    """Azimuth and z where a helix from the origin crosses transverse radius rho."""
    R = curvature_radius(pt)
    half_turn = np.arcsin(np.asarray(rho) / (2.0 * R))
    phi = phi0 - charge * half_turn
    z = z0 + 2.0 * R * half_turn * np.sinh(eta)
    return np.angle(np.exp(1j * phi)), z


def generate_tracking_event(seed: int, n_particles: int, layers: int = 10,
                            noise_frac: float = 0.0, event_id: int = 0,
                            pt_range=(PT_THRESHOLD, 10.0), eta_max: float = 1.5,
                            z0_sigma: float = 10.0, smear: float = SMEAR_MM) -> TrackingEvent:
    """Helical tracks crossing barrel layers, plus uniform noise hits.

    pT is log-uniform in ``pt_range`` (lower bound excluded), eta uniform in
    [-eta_max, eta_max].  ``noise_frac`` is the fraction of all hits that are
    noise.  Hits are sorted by layer then azimuth and numbered in that order.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be at least 1")
    if layers < 3:
        raise ValueError("need at least 3 layers")
    if not 0.0 <= noise_frac < 1.0:
        raise ValueError("noise_frac must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    lo, hi = pt_range
    pt = np.exp(rng.uniform(np.log(lo), np.log(hi), n_particles))
    pt = np.where(pt <= lo, np.nextafter(lo, np.inf), pt)
    phi0 = rng.uniform(-np.pi, np.pi, n_particles)
    eta = rng.uniform(-eta_max, eta_max, n_particles)
    charge = rng.choice([-1.0, 1.0], n_particles)
    z0 = rng.normal(0.0, z0_sigma, n_particles)

    radii = layer_radii(layers)
    phi_h, z_h = helix_point(radii[None, :], pt[:, None], phi0[:, None], eta[:, None],
                             charge[:, None], z0[:, None])
    pid = np.repeat(np.arange(n_particles), layers)
    lay = np.tile(np.arange(layers), n_particles)
    rho = radii[lay]
    phi_h, z_h = phi_h.reshape(-1), z_h.reshape(-1)
    inside = np.abs(z_h) <= Z_MAX
    x, y = rho * np.cos(phi_h), rho * np.sin(phi_h)
    x = x + rng.normal(0.0, smear, x.shape)
    y = y + rng.normal(0.0, smear, y.shape)
    z_h = z_h + rng.normal(0.0, smear, z_h.shape)
    x, y, z_h, lay, pid = x[inside], y[inside], z_h[inside], lay[inside], pid[inside]
    hit_pt = pt[pid]

    n_noise = int(round(noise_frac * len(x) / (1.0 - noise_frac)))
    if n_noise:
        nl = rng.integers(0, layers, n_noise)
        nphi = rng.uniform(-np.pi, np.pi, n_noise)
        x = np.concatenate([x, radii[nl] * np.cos(nphi)])
        y = np.concatenate([y, radii[nl] * np.sin(nphi)])
        z_h = np.concatenate([z_h, rng.uniform(-Z_MAX, Z_MAX, n_noise)])
        lay = np.concatenate([lay, nl])
        pid = np.concatenate([pid, -np.ones(n_noise, dtype=np.int64)])
        hit_pt = np.concatenate([hit_pt, np.zeros(n_noise)])

    _, phi, _ = to_cylindrical(x, y, z_h)
    order = np.lexsort((phi, lay))
    x, y, z_h, lay, pid, hit_pt, phi = (a[order] for a in (x, y, z_h, lay, pid, hit_pt, phi))
    r = np.hypot(x, y)
    local_u = np.mod(r * phi, MODULE_U) - MODULE_U / 2
    local_v = np.mod(z_h, MODULE_V) - MODULE_V / 2
    meta = {"seed": int(seed), "n_particles": int(n_particles), "layers": int(layers),
            "noise_frac": float(noise_frac), "smear": float(smear),
            "particles": {"pt": pt, "phi0": phi0, "eta": eta, "charge": charge, "z0": z0}}
    return TrackingEvent(event_id, np.arange(len(x)), x, y, z_h, lay.astype(np.int64), local_u,
                         local_v, pid.astype(np.int64), hit_pt, meta)


def tracking_preset(name: str, seed: int, event_id: int = 0, noise_frac: float = 0.1,
                    layers: int = 10) -> TrackingEvent:
    if name not in TRACKING_PRESETS:
        raise KeyError(f"unknown tracking preset {name!r}")
    n_particles = max(1, int(round(TRACKING_PRESETS[name] * (1 - noise_frac) / layers)))
    return generate_tracking_event(seed, n_particles, layers, noise_frac, event_id)


def filter_pt(event: TrackingEvent, threshold: float = PT_THRESHOLD) -> TrackingEvent:
    """Drop hits of particles with pT <= threshold (noise is kept)."""
    keep = (event.particle_id < 0) | (event.pt > threshold)
    return event.subset(keep)


def split_sectors(event, n_sector: int) -> list:
    """Partition by azimuth into ``n_sector`` equal wedges (hit counts may differ)."""
    if n_sector < 1:
        raise ValueError("n_sector must be at least 1")
    if n_sector == 1:
        return [event]
    if isinstance(event, TrackingEvent):
        _, phi, _ = event.cylindrical
    else:
        phi = event.phi
    sector = np.minimum(((phi + np.pi) / (2 * np.pi) * n_sector).astype(np.int64), n_sector - 1)
    out = []
    for s in range(n_sector):
        sub = event.subset(sector == s)
        sub.meta["sector"] = s
        sub.meta["n_sector"] = n_sector
        out.append(sub)
    return out


# -- pileup -----------------------------------------------------------------------

def generate_pileup_event(seed: int, n_particles: int = 10_000, charged_frac: float = 0.6,
                          lv_frac: float = 0.1, n_pu_vertices: int = 50, event_id: int = 0,
                          jets_per_vertex: int = 3) -> PileupEvent:
    """Particles from the primary vertex (label 1) and pileup vertices (label 0).

    Features: eta, phi, pT, energy, charge, vertex tag and a particle-type
    code.  Charged particles carry their true vertex index (0 = primary), so
    their label follows from the tag.  Neutral particles are tagged -1; their
    label is only correlated with position, because each vertex scatters its
    particles around its own Gaussian (eta, phi) blobs.
    """
    for name, v in (("charged_frac", charged_frac), ("lv_frac", lv_frac)):
        if not 0.0 < v <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1]")
    if n_particles < 1:
        raise ValueError("n_particles must be at least 1")
    rng = np.random.default_rng(seed)
    n = n_particles
    label = (rng.random(n) < lv_frac).astype(np.int64)
    charged = rng.random(n) < charged_frac
    vertex_true = np.where(label == 1, 0, rng.integers(1, n_pu_vertices + 1, n))

    n_vert = n_pu_vertices + 1
    blob_eta = rng.uniform(-2.0, 2.0, (n_vert, jets_per_vertex))
    blob_phi = rng.uniform(-np.pi, np.pi, (n_vert, jets_per_vertex))
    which = rng.integers(0, jets_per_vertex, n)
    in_blob = rng.random(n) < np.where(label == 1, 0.7, 0.3)
    width = np.where(label == 1, 0.25, 0.5)
    eta = np.where(in_blob, blob_eta[vertex_true, which] + rng.normal(0, 1, n) * width,
                   rng.uniform(-2.5, 2.5, n))
    eta = np.clip(eta, -2.5, 2.5)
    phi = np.where(in_blob, blob_phi[vertex_true, which] + rng.normal(0, 1, n) * width,
                   rng.uniform(-np.pi, np.pi, n))
    phi = np.angle(np.exp(1j * phi))
    pt = np.where(label == 1, 0.5 + rng.exponential(5.0, n), 0.3 + rng.exponential(1.0, n))
    energy = pt * np.cosh(eta)
    charge = np.where(charged, rng.choice([-1, 1], n), 0).astype(np.int64)
    pid = np.where(charged, rng.choice(_CHARGED_PIDS, n, p=_CHARGED_PROBS),
                   rng.choice(_NEUTRAL_PIDS, n, p=_NEUTRAL_PROBS)).astype(np.int64)
    vertex = np.where(charged, vertex_true, -1).astype(np.int64)
    meta = {"seed": int(seed), "n_particles": int(n), "charged_frac": float(charged_frac),
            "lv_frac": float(lv_frac)}
    return PileupEvent(event_id, pid, eta, phi, pt, energy, charge, vertex, label, meta)


# -- CSV ------------------------------------------------------------------------------

def _format(value, column: str) -> str:
    if column in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def save_csv(events, path) -> None:
    """Write one or more events of the same kind with a header row."""
    if isinstance(events, (TrackingEvent, PileupEvent)):
        events = [events]
    events = list(events)
    if not events:
        raise ValueError("nothing to write")
    kind = type(events[0])
    if any(type(e) is not kind for e in events):
        raise ValueError("cannot mix tracking and pileup events in one file")
    columns = TRACKING_COLUMNS if kind is TrackingEvent else PILEUP_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for ev in events:
            arrays = [None if c == "event_id" else getattr(ev, c) for c in columns]
            for i in range(len(ev)):
                writer.writerow([str(ev.event_id) if c == "event_id" else _format(a[i], c)
                                 for c, a in zip(columns, arrays)])


def load_csv(path) -> list:
    """Read events written by :func:`save_csv` (or a compatible export).

    Columns are matched by name, so their order does not matter; unknown or
    missing columns and malformed rows raise :class:`CsvFormatError`.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if set(header) == set(TRACKING_COLUMNS):
            kind, columns = TrackingEvent, TRACKING_COLUMNS
        elif set(header) == set(PILEUP_COLUMNS):
            kind, columns = PileupEvent, PILEUP_COLUMNS
        else:
            known = set(TRACKING_COLUMNS) | set(PILEUP_COLUMNS)
            unknown = [h for h in header if h not in known]
            if unknown:
                raise CsvFormatError(f"{path}:1: unknown column(s) {unknown}")
            raise CsvFormatError(f"{path}:1: header does not match a known schema: {header}")
        if len(header) != len(set(header)):
            raise CsvFormatError(f"{path}:1: duplicate columns")
        raw = {c: [] for c in columns}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for name, value in zip(header, row):
                try:
                    raw[name].append(int(value) if name in _INT_COLUMNS else float(value))
                except ValueError:
                    raise CsvFormatError(f"{path}:{lineno}: bad value {value!r} for {name}") from None
    if not raw["event_id"]:
        raise CsvFormatError(f"{path}: no data rows")
    arrays = {c: np.asarray(v, dtype=np.int64 if c in _INT_COLUMNS else np.float64)
              for c, v in raw.items()}
    events = []
    ids, first = np.unique(arrays["event_id"], return_index=True)
    for eid in ids[np.argsort(first)]:
        sel = arrays["event_id"] == eid
        cols = {c: arrays[c][sel] for c in columns if c != "event_id"}
        events.append(kind(int(eid), **cols))
    return events


# -- model inputs ---------------------------------------------------------------------

def tracking_inputs(event: TrackingEvent):
    """Per-hit features (n, 7) and hashing coordinates (n, 3).

    Features: r, cos phi, sin phi, z (scaled to O(1)), pseudorapidity of the
    hit position, and the two local sensor coordinates.  Coordinates: hit
    pseudorapidity, cos phi, sin phi.
    """
    r, phi, z = event.cylindrical
    eta = np.arcsinh(z / np.maximum(r, 1e-9))
    feats = np.stack([r / R_MAX, np.cos(phi), np.sin(phi), z / R_MAX, eta,
                      event.local_u / MODULE_U, event.local_v / MODULE_V], axis=1)
    coords = np.stack([eta, np.cos(phi), np.sin(phi)], axis=1)
    return feats, coords


def pileup_inputs(event: PileupEvent):
    """Continuous features (n, 6), coordinates (eta, phi) and type codes."""
    feats = np.stack([np.log1p(event.pt), np.log1p(event.energy), event.charge.astype(np.float64),
                      (event.vertex == 0).astype(np.float64), (event.vertex > 0).astype(np.float64),
                      (event.vertex < 0).astype(np.float64)], axis=1)
    coords = np.stack([event.eta, event.phi], axis=1)
    return feats, coords, event.particle_id_code.astype(np.int64)


__all__ = [
    "CsvFormatError", "Hit", "PileupEvent", "TrackingEvent", "filter_pt", "generate_pileup_event",
    "generate_tracking_event", "helix_point", "load_csv", "pileup_inputs", "save_csv",
    "split_sectors", "to_cartesian", "to_cylindrical", "tracking_inputs", "tracking_preset",
    "PID_VOCAB", "PILEUP_PRESETS", "TRACKING_PRESETS",
]
