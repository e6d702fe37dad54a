import numpy as np
import pytest

from cflsim.errors import ConfigError
from cflsim.objectives import exact_optimum, fit_least_squares
from cflsim.partition import (
    LabeledPool,
    PartitionManifest,
    dirichlet_split,
    hierarchical_split,
    make_synthetic_pool,
    overlap_window,
    read_manifest,
    renormalize,
    write_manifest,
)


def balanced_pool(classes=5, per_class=40):
    return LabeledPool(labels=np.repeat(np.arange(classes), per_class))


def max_class_share(pool, manifest):
    """Mean over clients of the heaviest class's share of the allocation."""
    shares = []
    for client in manifest.subsets:
        items = [i for subset in client for i in subset]
        counts = np.bincount(pool.labels[items], minlength=pool.n_classes)
        shares.append(counts.max() / counts.sum())
    return float(np.mean(shares))


class TestRenormalize:
    def test_zeroes_and_rescales(self):
        out = renormalize(np.array([0.2, 0.3, 0.5]), 1)
        assert np.allclose(out, [0.2 / 0.7, 0.0, 0.5 / 0.7])

    def test_preserves_surviving_ratios(self):
        theta = np.array([0.1, 0.4, 0.2, 0.3])
        out = renormalize(theta, 3)
        assert out[3] == 0.0
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert out[1] / out[0] == pytest.approx(4.0)

    def test_survives_near_total_mass(self):
        # the removed entry carries all but a few ulps of the mass
        theta = np.array([1.0 - 3e-17, 2e-17, 1e-17])
        out = renormalize(theta, 0)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert out[1] == pytest.approx(2.0 / 3.0)

    def test_no_mass_left_raises(self):
        with pytest.raises(ValueError):
            renormalize(np.array([1.0, 0.0]), 0)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            renormalize(np.array([0.5, 0.5]), 2)


class TestDirichletSplit:
    def test_exact_sizes_and_disjoint(self):
        pool = balanced_pool()
        manifest = dirichlet_split(pool, 4, 30, 0.5, np.random.default_rng(0))
        assert manifest.n_clients == 4
        items = manifest.all_items()
        assert len(items) == 120
        assert len(set(items)) == 120
        assert all(0 <= i < pool.total for i in items)
        for client in manifest.subsets:
            assert len(client) == 1 and len(client[0]) == 30

    def test_can_drain_the_pool_completely(self):
        pool = balanced_pool(classes=3, per_class=10)
        manifest = dirichlet_split(pool, 5, 6, 0.1, np.random.default_rng(1))
        assert sorted(manifest.all_items()) == list(range(30))

    def test_deterministic_per_generator(self):
        pool = balanced_pool()
        a = dirichlet_split(pool, 3, 20, 1.0, np.random.default_rng(7))
        b = dirichlet_split(pool, 3, 20, 1.0, np.random.default_rng(7))
        assert a.subsets == b.subsets

    def test_skew_decreases_with_concentration(self):
        pool = balanced_pool(classes=5, per_class=200)
        shares = []
        for alpha in (0.1, 1.0, 10.0, 1e6):
            per_seed = [
                max_class_share(
                    pool, dirichlet_split(pool, 5, 100, alpha, np.random.default_rng(s))
                )
                for s in range(8)
            ]
            shares.append(float(np.mean(per_seed)))
        assert shares[0] > shares[1] > shares[2] > shares[3]

    def test_huge_concentration_recovers_priors(self):
        # at alpha = 1e6 the mixture is the priors; only multinomial noise
        # from the 400-item draw remains (sd ~ 0.022 per class share), so
        # the mean share over 6 seeds sits within 0.03 of 0.25
        pool = balanced_pool(classes=4, per_class=1000)
        shares = np.zeros(4)
        for s in range(6):
            manifest = dirichlet_split(pool, 1, 400, 1e6, np.random.default_rng(s))
            counts = np.bincount(pool.labels[list(manifest.subsets[0][0])], minlength=4)
            shares += counts / 400.0
        assert np.max(np.abs(shares / 6 - 0.25)) < 0.03

    def test_rejects_oversubscription(self):
        with pytest.raises(ConfigError):
            dirichlet_split(balanced_pool(2, 5), 3, 4, 1.0, np.random.default_rng(0))

    def test_rejects_bad_alpha(self):
        pool = balanced_pool()
        with pytest.raises(ConfigError):
            dirichlet_split(pool, 2, 5, 0.0, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            dirichlet_split(pool, 2, 5, float("inf"), np.random.default_rng(0))


class TestHierarchicalSplit:
    def test_seven_clients_thirty_subsets(self):
        pool = balanced_pool(classes=7, per_class=850)
        manifest = hierarchical_split(pool, 7, 30, 1.0, 1.0, np.random.default_rng(0))
        assert manifest.n_clients == 7
        assert manifest.subsets_per_client == 30
        sizes = {len(s) for client in manifest.subsets for s in client}
        assert sizes == {28}  # 5950 // 7 = 850, rounded down to 840 = 30 x 28
        items = manifest.all_items()
        assert len(items) == 7 * 30 * 28
        assert len(set(items)) == len(items)

    def test_explicit_client_size(self):
        pool = balanced_pool(classes=4, per_class=100)
        manifest = hierarchical_split(
            pool, 2, 5, 1.0, 1.0, np.random.default_rng(1), client_size=50
        )
        for client in manifest.subsets:
            assert sum(len(s) for s in client) == 50

    def test_client_size_must_divide(self):
        pool = balanced_pool(classes=4, per_class=100)
        with pytest.raises(ConfigError):
            hierarchical_split(
                pool, 2, 5, 1.0, 1.0, np.random.default_rng(0), client_size=52
            )

    def test_subsets_drawn_from_own_client(self):
        pool = balanced_pool(classes=3, per_class=60)
        rng = np.random.default_rng(5)
        manifest = hierarchical_split(pool, 3, 4, 0.5, 0.5, rng)
        for client in manifest.subsets:
            flat = [i for s in client for i in s]
            assert len(set(flat)) == len(flat)

    def test_beta_validated(self):
        pool = balanced_pool()
        with pytest.raises(ConfigError):
            hierarchical_split(pool, 2, 3, 1.0, -1.0, np.random.default_rng(0))


class TestOverlapWindow:
    def test_round_zero_is_prefix(self):
        seq = list(range(100, 120))
        assert overlap_window(seq, 5, 3, 0) == seq[:5]

    def test_step_equals_window_means_disjoint(self):
        seq = list(range(285))
        a = overlap_window(seq, 285, 285, 0)
        b = overlap_window(seq, 285, 285, 1)
        assert len(set(a) & set(b)) == 285  # full wrap: same single window

    @pytest.mark.parametrize(
        "step,expected_overlap", [(285, 0), (213, 72), (142, 143)]
    )
    def test_consecutive_overlap_sizes(self, step, expected_overlap):
        # 1000-item sequence, 285-item window: consecutive rounds share
        # exactly window - step items (none when the step clears the window)
        seq = list(range(1000))
        a = overlap_window(seq, 285, step, 3)
        b = overlap_window(seq, 285, step, 4)
        assert len(set(a) & set(b)) == expected_overlap
        frac = expected_overlap / 285
        assert abs(frac - round(frac * 4) / 4) < 0.01  # ~0%, 25%, 50%

    def test_wraps_around(self):
        seq = [10, 11, 12, 13]
        assert overlap_window(seq, 3, 3, 1) == [13, 10, 11]

    def test_validation(self):
        with pytest.raises(ConfigError):
            overlap_window([], 1, 1, 0)
        with pytest.raises(ConfigError):
            overlap_window([1, 2], 3, 1, 0)
        with pytest.raises(ConfigError):
            overlap_window([1, 2], 1, 0, 0)
        with pytest.raises(ConfigError):
            overlap_window([1, 2], 1, 1, -1)


class TestSyntheticPool:
    def test_shapes_and_labels(self):
        pool = make_synthetic_pool(4, 25, 6, master_seed=0)
        assert pool.total == 100
        assert pool.n_classes == 4
        assert pool.features.shape == (100, 6)
        assert pool.targets.shape == (100,)
        assert np.array_equal(np.bincount(pool.labels), [25, 25, 25, 25])

    def test_deterministic_per_seed(self):
        a = make_synthetic_pool(3, 10, 4, master_seed=5)
        b = make_synthetic_pool(3, 10, 4, master_seed=5)
        c = make_synthetic_pool(3, 10, 4, master_seed=6)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.targets, b.targets)
        assert not np.array_equal(a.features, c.features)

    def test_per_class_teachers_differ(self):
        # fitting each class alone must give visibly different optima,
        # otherwise subset mixtures could not move the local objective
        pool = make_synthetic_pool(2, 200, 5, master_seed=2)
        fits = []
        for c in (0, 1):
            idx = np.flatnonzero(pool.labels == c)
            fits.append(exact_optimum(fit_least_squares(pool.subset_samples(idx))))
        assert np.linalg.norm(fits[0] - fits[1]) > 0.5

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            make_synthetic_pool(0, 5, 3, master_seed=0)
        with pytest.raises(ConfigError):
            make_synthetic_pool(2, 5, 0, master_seed=0)


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        pool = balanced_pool(classes=3, per_class=30)
        manifest = hierarchical_split(pool, 3, 2, 1.0, 2.0, np.random.default_rng(4))
        path = tmp_path / "parts.csv"
        write_manifest(manifest, str(path))
        back = read_manifest(str(path))
        assert back.subsets == manifest.subsets

    def test_write_format(self, tmp_path):
        manifest = PartitionManifest(subsets=(((1, 2), (3,)),), alpha=0.5, beta=1.0)
        path = tmp_path / "m.csv"
        write_manifest(manifest, str(path))
        assert path.read_text() == "client,subset,items\n0,0,1 2\n0,1,3\n"

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n0,0,1\n")
        with pytest.raises(ConfigError, match="not a partition manifest"):
            read_manifest(str(path))

    def test_reports_line_number_for_bad_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client,subset,items\n0,0,1 2\n0,1\n")
        with pytest.raises(ConfigError, match="bad.csv:3"):
            read_manifest(str(path))

    def test_reports_non_integer_items(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client,subset,items\n0,0,1 x\n")
        with pytest.raises(ConfigError, match="bad.csv:2"):
            read_manifest(str(path))

    def test_missing_client_detected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client,subset,items\n0,0,1\n2,0,2\n")
        with pytest.raises(ConfigError, match="missing client"):
            read_manifest(str(path))


class TestLabeledPool:
    def test_rejects_sparse_labels(self):
        with pytest.raises(ValueError, match="class 1"):
            LabeledPool(labels=np.array([0, 0, 2]))

    def test_rejects_negative_labels(self):
        with pytest.raises(ValueError):
            LabeledPool(labels=np.array([0, -1]))

    def test_subset_samples_requires_data(self):
        pool = balanced_pool()
        with pytest.raises(ValueError):
            pool.subset_samples([0, 1])

    def test_priors(self):
        pool = LabeledPool(labels=np.array([0, 0, 0, 1]))
        assert np.allclose(pool.priors(), [0.75, 0.25])
