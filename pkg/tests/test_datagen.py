import numpy as np
import pytest

from cgua.cgc import cgc_cluster
from cgua.core import EmbeddingMatrix, read_embeddings_jsonl, validate_catalog, write_embeddings_jsonl
from cgua.datagen import WorldConfig, cotravel_rate, generate, heldout_split
from cgua.errors import InfeasiblePackingError
from cgua.evaluation import pairwise_f1


def test_shapes_and_catalog():
    cfg = WorldConfig(n_identities=6, sightings_per_identity=3, n_unpaired=4, d_raw=8, seed=1)
    w = generate(cfg)
    assert w.n == 22 and w.raw_features.shape == (22, 8)
    validate_catalog(w.catalog, w.n)
    assert np.allclose(np.linalg.norm(w.raw_features, axis=1), 1)
    counts = np.bincount(w.true_identity)
    assert counts[:6].tolist() == [3] * 6 and counts[6:].tolist() == [1] * 4
    lo, hi = cfg.persons_per_scene
    sizes = [len(m) for m in w.catalog.members]
    assert min(sizes) >= lo and max(sizes) <= hi
    for mem in w.catalog.members:
        ids = w.true_identity[list(mem)]
        assert np.unique(ids).size == ids.size


def test_companions_share_scenes():
    w = generate(WorldConfig(n_identities=10, sightings_per_identity=3, n_unpaired=2, cotravel_prob=1.0, seed=2))
    assert cotravel_rate(w) == 1.0
    for a, b in w.companions:
        sa = set(w.catalog.image_of[w.true_identity == a].tolist())
        sb = set(w.catalog.image_of[w.true_identity == b].tolist())
        assert sa == sb


def test_zero_noise_recovers_truth():
    cfg = WorldConfig(n_identities=8, sightings_per_identity=2, n_unpaired=0, noise_sigma=0.0, seed=5)
    w = generate(cfg)
    for ident in range(8):
        rows = w.raw_features[w.true_identity == ident]
        assert np.array_equal(rows[0], rows[1])
    assert pairwise_f1(cgc_cluster(EmbeddingMatrix(w.raw_features), w.catalog, 0.0), w.true_identity)[2] == 1.0


def test_only_unpaired():
    w = generate(WorldConfig(n_identities=0, n_unpaired=9, seed=1))
    assert np.unique(w.true_identity).size == 9


def test_seed11_byte_identical(tmp_path):
    a = generate(WorldConfig(seed=11))
    b = generate(WorldConfig(seed=11))
    write_embeddings_jsonl(tmp_path / "a.jsonl", a.raw_features)
    write_embeddings_jsonl(tmp_path / "b.jsonl", b.raw_features)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert np.array_equal(read_embeddings_jsonl(tmp_path / "a.jsonl")[1].data, a.raw_features)
    assert not np.array_equal(generate(WorldConfig(seed=12)).raw_features[:3], a.raw_features[:3])


def test_companion_heavy_world_packs():
    # mostly companion pairs and tiny scenes: fixed scene sizes rarely fit
    for seed in range(20):
        w = generate(WorldConfig(n_identities=9, sightings_per_identity=3, n_unpaired=1, d_raw=4, cotravel_prob=1.0,
                                 persons_per_scene=(1, 3), seed=seed))
        assert w.n == 28
        assert max(len(m) for m in w.catalog.members) <= 3
        for mem in w.catalog.members:
            assert np.unique(w.true_identity[list(mem)]).size == len(mem)


def test_config_errors():
    for bad in (dict(noise_sigma=-1), dict(n_unpaired=-1), dict(cotravel_prob=1.5), dict(persons_per_scene=(3, 2))):
        with pytest.raises(ValueError):
            WorldConfig(**bad)
    with pytest.raises(ValueError):
        WorldConfig.from_dict({"identities": 3})
    with pytest.raises(InfeasiblePackingError):
        generate(WorldConfig(n_identities=4, persons_per_scene=(1, 1), cotravel_prob=1.0))
    with pytest.raises(InfeasiblePackingError):
        generate(WorldConfig(n_identities=0, n_unpaired=0))


def test_heldout_split_independent_of_training_world():
    w = generate(WorldConfig.standard(seed=2))
    s1, s2 = heldout_split(w), heldout_split(w, queries_per_identity=2)
    assert s1.query_raw.shape == (30, 256)
    assert s1.gallery_raw.shape[0] == 30 * 2 + 15
    assert all(r.size == 2 for r in s1.relevance())
    assert s2.query_raw.shape[0] == 60
    assert not np.isin(s1.gallery_raw.view("V2048").ravel(), w.raw_features.view("V2048").ravel()).any()


def test_lookalikes_leave_the_rest_alone():
    plain = generate(WorldConfig(seed=3))
    twin = generate(WorldConfig(seed=3, lookalike_sigma=0.1))
    assert np.array_equal(plain.catalog.image_of, twin.catalog.image_of)
    assert np.array_equal(plain.prototypes[:20], twin.prototypes[:20])
    assert not np.array_equal(plain.prototypes[20:], twin.prototypes[20:])


def test_standard_world():
    cfg = WorldConfig.standard()
    assert cfg.noise_sigma == pytest.approx(np.sqrt(1.5 / 256))
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg
