import numpy as np
import pytest

from ssmgrad import (
    DimensionMismatch,
    InitialCondition,
    InvariantViolation,
    SystemMatrices,
    validate_dimensions,
    zero_bundle,
)


def _sm(m=2, k=1):
    return SystemMatrices(
        F=np.eye(m), G=np.eye(m)[:, :k], H=np.eye(m)[0], Q=np.eye(k)
    )


class TestSystemMatrices:
    def test_consistent_shapes_ok(self):
        sm = _sm(2, 1)
        assert sm.m == 2 and sm.k == 1
        validate_dimensions(sm, zero_bundle(3, 2, 1))

    def test_g_shape_mismatch_names_g(self):
        with pytest.raises(DimensionMismatch, match="G"):
            SystemMatrices(F=np.eye(2), G=np.zeros((3, 1)), H=np.array([1.0, 0.0]),
                           Q=np.eye(1))

    def test_r_must_be_one(self):
        with pytest.raises(InvariantViolation):
            SystemMatrices(F=np.eye(1), G=np.eye(1), H=np.ones(1), Q=np.eye(1), R=2.0)

    def test_q_symmetry_and_psd(self):
        with pytest.raises(InvariantViolation):
            SystemMatrices(F=np.eye(2), G=np.eye(2), H=np.eye(2)[0],
                           Q=np.array([[1.0, 0.5], [0.2, 1.0]]))
        with pytest.raises(InvariantViolation):
            SystemMatrices(F=np.eye(1), G=np.eye(1), H=np.ones(1),
                           Q=np.array([[-1.0]]))

    def test_arrays_immutable(self):
        sm = _sm()
        with pytest.raises(ValueError):
            sm.F[0, 0] = 2.0


class TestZeroBundle:
    @pytest.mark.parametrize("p,m,k", [(1, 1, 1), (2, 13, 2), (5, 16, 3)])
    def test_shapes_and_zeros(self, p, m, k):
        db = zero_bundle(p, m, k)
        assert db.p == p
        assert db.dF.shape == (p, m, m)
        assert db.d2Q.shape == (p, p, k, k)
        for name in db.__dataclass_fields__:
            assert not getattr(db, name).any()
        assert not (db.depends_F or db.depends_G or db.depends_H or db.depends_R)

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(DimensionMismatch):
            zero_bundle(0, 1, 1)


class TestValidateDimensions:
    def test_bundle_shape_mismatch_named(self):
        sm = _sm(2, 1)
        with pytest.raises(DimensionMismatch, match="dG"):
            good = zero_bundle(2, 2, 1)
            bad = good.__class__(**{
                **{f: getattr(good, f) for f in good.__dataclass_fields__},
                "dG": np.zeros((2, 3, 1)),
            })
            validate_dimensions(sm, bad)

    def test_nonsymmetric_dq_rejected(self):
        sm = _sm(2, 2)
        db = zero_bundle(1, 2, 2)
        fields = {f: np.array(getattr(db, f)) for f in db.__dataclass_fields__}
        fields["dQ"] = np.array([[[0.0, 1.0], [0.0, 0.0]]])
        with pytest.raises(InvariantViolation, match="dQ.*symmetric"):
            validate_dimensions(sm, db.__class__(**fields))

    def test_nonsymmetric_d2f_pair_rejected(self):
        sm = _sm(1, 1)
        db = zero_bundle(2, 1, 1)
        fields = {f: np.array(getattr(db, f)) for f in db.__dataclass_fields__}
        d2F = np.zeros((2, 2, 1, 1))
        d2F[0, 1, 0, 0] = 1.0
        fields["d2F"] = d2F
        with pytest.raises(InvariantViolation, match="d2F"):
            validate_dimensions(sm, db.__class__(**fields))


class TestInitialCondition:
    def test_defaults(self):
        x0, V0 = InitialCondition().resolve(3)
        assert np.array_equal(x0, np.zeros(3))
        assert np.array_equal(V0, 1e4 * np.eye(3))

    def test_custom_kappa_and_arrays(self):
        x0, V0 = InitialCondition(kappa=2.5).resolve(2)
        assert V0[0, 0] == 2.5
        ic = InitialCondition(x0=np.ones(2), V0=np.eye(2))
        x0, V0 = ic.resolve(2)
        assert x0[0] == 1.0 and V0[1, 1] == 1.0

    def test_shape_errors(self):
        with pytest.raises(DimensionMismatch):
            InitialCondition(x0=np.ones(3)).resolve(2)
