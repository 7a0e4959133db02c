import numpy as np
import pytest

from lampa.data import (CsvFormatError, PILEUP_COLUMNS, TRACKING_COLUMNS, filter_pt, generate_pileup_event,
                        generate_tracking_event, helix_point, layer_radii, load_csv, save_csv, split_sectors,
                        to_cartesian, to_cylindrical, tracking_preset)


def test_to_cylindrical_cases(rng):
    assert to_cylindrical(1.0, 0.0, 5.0) == (1.0, 0.0, 5.0)
    r, phi, z = to_cylindrical(0.0, 2.0, -1.0)
    assert r == 2.0 and abs(phi - np.pi / 2) < 1e-15 and z == -1.0
    assert to_cylindrical(-1.0, -0.0, 0.0)[1] == np.pi
    x, y, z = rng.normal(size=(3, 100))
    xr, yr, _ = to_cartesian(*to_cylindrical(x, y, z))
    assert np.max(np.abs(xr - x)) < 1e-12 and np.max(np.abs(yr - y)) < 1e-12


def test_tracking_event_basic():
    ev = generate_tracking_event(3, 20, noise_frac=0.0)
    assert np.all(ev.particle_id >= 0)
    r, phi, _ = ev.cylindrical
    assert np.all((phi > -np.pi) & (phi <= np.pi))
    for h in list(ev.hits())[:5]:
        assert abs(h.cylindrical[0] - np.hypot(h.x, h.y)) < 1e-9
    order = np.lexsort((phi, ev.layer))
    assert np.array_equal(order, np.arange(len(ev)))
    with pytest.raises(ValueError):
        generate_tracking_event(0, 0)
    with pytest.raises(ValueError):
        generate_tracking_event(0, 1, layers=2)


def test_single_particle_monotone_layers():
    ev = generate_tracking_event(1, 1, layers=10, eta_max=0.5, z0_sigma=0.0)
    assert len(ev) == 10
    r, _, z = ev.cylindrical
    assert np.all(np.diff(r) > 0)
    dz = np.diff(z)
    assert np.all(dz > 0) or np.all(dz < 0)


def test_helix_consistency():
    ev = generate_tracking_event(11, 50, noise_frac=0.0)
    p = ev.meta["particles"]
    r, phi, z = ev.cylindrical
    radii = layer_radii(ev.meta["layers"])[ev.layer]
    pid = ev.particle_id
    phi_h, z_h = helix_point(radii, p["pt"][pid], p["phi0"][pid], p["eta"][pid], p["charge"][pid], p["z0"][pid])
    tol = 5 * ev.meta["smear"]
    arc = radii * np.abs(np.angle(np.exp(1j * (phi - phi_h))))
    assert np.all(np.abs(r - radii) < tol * 1.5) and np.all(arc < tol * 1.5)
    assert np.all(np.abs(z - z_h) < tol)


def test_noise_and_pt_filter():
    ev = generate_tracking_event(5, 30, noise_frac=0.2, pt_range=(0.5, 5.0))
    assert np.any(ev.particle_id == -1)
    assert abs(np.mean(ev.particle_id == -1) - 0.2) < 0.02
    f = filter_pt(ev)
    assert np.all((f.particle_id == -1) | (f.pt > 0.9))
    assert np.sum(f.particle_id == -1) == np.sum(ev.particle_id == -1)


def test_presets_and_determinism():
    ev = tracking_preset("tracking-6k", 0)
    assert abs(len(ev) - 6000) / 6000 < 0.05
    a, b = generate_tracking_event(9, 40, noise_frac=0.1), generate_tracking_event(9, 40, noise_frac=0.1)
    for c in TRACKING_COLUMNS[1:]:
        assert getattr(a, c).tobytes() == getattr(b, c).tobytes()


def test_split_sectors(rng):
    # hits of one track share phi, so counts fluctuate with the particle count; 60k hits keeps 10% at ~3.5 sigma
    ev = tracking_preset("tracking-60k", 2)
    assert split_sectors(ev, 1)[0] is ev
    parts = split_sectors(ev, 6)
    ids = np.concatenate([p.hit_id for p in parts])
    assert len(ids) == len(ev) and np.array_equal(np.sort(ids), ev.hit_id)
    counts = np.array([len(p) for p in parts])
    assert np.all(np.abs(counts - len(ev) / 6) <= 0.1 * len(ev) / 6)
    with pytest.raises(ValueError):
        split_sectors(ev, 0)


def test_pileup_event():
    ev = generate_pileup_event(0, 5000, charged_frac=0.6, lv_frac=0.2)
    n = len(ev)
    sd = np.sqrt(n * 0.2 * 0.8)
    assert abs(ev.label.sum() - 0.2 * n) < 3 * sd
    charged = ev.charge != 0
    assert abs(charged.sum() - 0.6 * n) < 3 * np.sqrt(n * 0.24)
    assert np.array_equal(ev.label[charged], (ev.vertex[charged] == 0).astype(int))
    assert np.all(ev.vertex[~charged] == -1)
    assert np.all(generate_pileup_event(1, 100, lv_frac=1.0).label == 1)
    with pytest.raises(ValueError):
        generate_pileup_event(0, 10, charged_frac=0.0)
    with pytest.raises(ValueError):
        generate_pileup_event(0, 10, lv_frac=1.5)


def test_csv_round_trip(tmp_path):
    evs = [generate_tracking_event(1, 10, noise_frac=0.1, event_id=i) for i in range(2)]
    path = tmp_path / "t.csv"
    save_csv(evs, path)
    back = load_csv(path)
    assert len(back) == 2
    for a, b in zip(evs, back):
        for c in TRACKING_COLUMNS[1:]:
            assert np.array_equal(getattr(a, c), getattr(b, c))
    pe = generate_pileup_event(4, 50)
    save_csv(pe, tmp_path / "p.csv")
    pb = load_csv(tmp_path / "p.csv")[0]
    for c in PILEUP_COLUMNS[1:]:
        assert np.array_equal(getattr(pe, c), getattr(pb, c))


def test_csv_permuted_header(tmp_path):
    ev = generate_tracking_event(1, 5)
    save_csv(ev, tmp_path / "a.csv")
    rows = (tmp_path / "a.csv").read_text().splitlines()
    cells = [r.split(",") for r in rows]
    perm = list(reversed(range(len(cells[0]))))
    (tmp_path / "b.csv").write_text("\n".join(",".join(c[i] for i in perm) for c in cells) + "\n")
    a, b = load_csv(tmp_path / "a.csv")[0], load_csv(tmp_path / "b.csv")[0]
    for c in TRACKING_COLUMNS[1:]:
        assert np.array_equal(getattr(a, c), getattr(b, c))


def test_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(CsvFormatError):
        load_csv(empty)
    header_only = tmp_path / "h.csv"
    header_only.write_text(",".join(TRACKING_COLUMNS) + "\n")
    with pytest.raises(CsvFormatError):
        load_csv(header_only)
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join(TRACKING_COLUMNS) + "\n0,0,1,2,3,0,0,0,1,1.5\n0,1,x,2,3,0,0,0,1,1.5\n")
    with pytest.raises(CsvFormatError, match=":3:"):
        load_csv(bad)
    unknown = tmp_path / "u.csv"
    unknown.write_text(",".join(TRACKING_COLUMNS) + ",extra\n")
    with pytest.raises(CsvFormatError, match="unknown"):
        load_csv(unknown)
