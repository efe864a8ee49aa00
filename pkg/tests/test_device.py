import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tramsim.device import (ConfigError, DeviceSpec, MeshConfig, MeshError, RegionSpec,
                            build_mesh, doping_at, load_config, parse_config, reference_config,
                            reference_config_text, scale_doping, serialize_config)

PN = """
device:
  area_cm2: 1.0e-8
  regions:
    - {name: p, length_nm: 500, type: acceptor, concentration_cm3: 1.0e+18}
    - {name: n, length_nm: 500, type: donor, concentration_cm3: 1.0e+18}
"""


@pytest.fixture(scope="module")
def six_layer():
    return reference_config("pnpnn6")


class TestParse:
    def test_reference_defaults(self, six_layer):
        dev = six_layer.device
        assert [round(r.length * 1e9) for r in dev.regions] == [200, 400, 200, 400, 400, 200]
        assert dev.regions[3].concentration == 1e16
        assert dev.gate.covered_region_index == 3
        assert dev.gate.oxide_thickness == pytest.approx(5e-9)

    def test_four_layer_reference(self):
        dev = reference_config("pnpn4").device
        assert [r.doping_type for r in dev.regions] == ["acceptor", "donor", "acceptor", "donor"]

    def test_round_trip(self, six_layer):
        text = serialize_config(six_layer)
        again = parse_config(text)
        assert serialize_config(again) == text
        for a, b in zip(again.device.regions, six_layer.device.regions):
            assert a.length == pytest.approx(b.length, rel=1e-15)
            assert (a.name, a.doping_type, a.concentration) == (b.name, b.doping_type,
                                                                b.concentration)
        assert again.mesh == six_layer.mesh and again.material == six_layer.material

    def test_anode_node_doping(self, six_layer):
        mesh = build_mesh(six_layer)
        assert doping_at(mesh, 0) == -1.0e20
        assert doping_at(mesh, mesh.n_nodes - 1) == 1.0e20
        with pytest.raises(IndexError):
            doping_at(mesh, mesh.n_nodes)

    @pytest.mark.parametrize("text,fragment", [
        ("", "empty"),
        ("device: [", "parse error"),
        (PN.replace("area_cm2", "aera_cm2"), "aera_cm2"),
        (PN.replace("length_nm: 500, type: acceptor", "length_nm: -5, type: acceptor"),
         "length"),
        (PN.replace("type: acceptor", "type: donor", 1), "anode region must be acceptor"),
        (PN.replace("concentration_cm3: 1.0e+18}", "concentration_cm3: 0}", 1), "inconsistent"),
        (PN + "  gate: {region: 1, tox_nm: 5}\n", "must be acceptor-doped"),
        (PN + "  gate: {region: 7, tox_nm: 5}\n", "out of range"),
        (PN + "mesh: {points_per_region: 2}\n", "points_per_region"),
        (PN + "material: {srh_tau_n: -1}\n", "srh_tau_n"),
    ])
    def test_errors_name_the_field(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_reference_text_is_shipped(self):
        assert "regions" in reference_config_text("pnpn4")


class TestMesh:
    def test_boundaries_are_nodes(self, six_layer):
        mesh = build_mesh(six_layer)
        for b in six_layer.device.boundaries:
            assert np.min(np.abs(mesh.node_positions - b)) == 0.0

    def test_refinement_at_junctions(self, six_layer):
        mesh = build_mesh(six_layer)
        h = mesh.spacing
        for j in mesh.junction_nodes:
            # boundary pinning may shrink the first cell slightly
            assert h[j - 1] == pytest.approx(1e-9, rel=0.05)
            assert h[j] == pytest.approx(1e-9, rel=0.05)
        assert len(mesh.junction_nodes) == 5

    def test_gate_fraction(self, six_layer):
        mesh = build_mesh(six_layer)
        assert np.all((mesh.gate_fraction >= 0) & (mesh.gate_fraction <= 1))
        inside = mesh.region_index == 3
        assert np.all(mesh.gate_fraction[inside][1:] == 1.0)
        lo, hi = six_layer.device.boundaries[3:5]
        covered = np.sum(mesh.control_volumes * mesh.gate_fraction)
        assert covered == pytest.approx(hi - lo, rel=1e-12)

    def test_arrays_are_read_only(self, six_layer):
        mesh = build_mesh(six_layer)
        with pytest.raises(ValueError):
            mesh.net_doping[0] = 0.0

    def test_too_short_region(self):
        dev = DeviceSpec((RegionSpec("p", 1e-9, "acceptor", 1e18), RegionSpec("n", 1e-7, "donor", 1e18)))
        with pytest.raises(MeshError):
            build_mesh(dev, MeshConfig(junction_refine_spacing=5e-9))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(50, 2000), min_size=2, max_size=6),
           st.integers(3, 60))
    def test_mesh_invariants(self, lengths_nm, ppr):
        kinds = ["acceptor" if k % 2 == 0 else "donor" for k in range(len(lengths_nm))]
        kinds[-1] = "donor"
        regions = [RegionSpec(f"r{k}", L * 1e-9, t, 10.0 ** (16 + k % 4))
                   for k, (L, t) in enumerate(zip(lengths_nm, kinds))]
        dev = DeviceSpec(regions)
        mesh = build_mesh(dev, MeshConfig(points_per_region=ppr))
        assert np.all(mesh.spacing > 0)
        assert mesh.node_positions[0] == 0.0
        assert mesh.node_positions[-1] == pytest.approx(dev.total_length, rel=1e-12)
        assert np.sum(mesh.control_volumes) == pytest.approx(dev.total_length, rel=1e-12)
        # doping is bounded by the two neighbouring regions' values
        sig = np.array([r.signed_concentration for r in regions])
        tol = 1e-12 * np.abs(sig).max()
        assert np.all(mesh.net_doping >= sig.min() - tol)
        assert np.all(mesh.net_doping <= sig.max() + tol)


def test_scale_doping(six_layer):
    scaled = scale_doping(six_layer, {0: 0.01, -1: 0.01, 3: 10})
    conc = [r.concentration for r in scaled.device.regions]
    assert conc == [1e18, 1e17, 1e18, 1e17, 1e17, 1e18]
    assert six_layer.device.regions[0].concentration == 1e20
