import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fftrust.align import epoch_align_loss
from fftrust.data import (
    DOMAIN_NAMES,
    DomainSpec,
    SequenceRecord,
    StageMarkov,
    default_domains,
    generate_benchmark,
    generate_domain,
    lodo_split,
    oracle_predict,
    read_dataset,
    read_header,
    records_by_domain,
    stack_records,
    tone_frequency,
    write_dataset,
)
from fftrust.exceptions import ConfigError, ContractError, ParseError, VersionError
from fftrust.model import ModelDims, encode, init_params

DIMS = ModelDims()


@pytest.fixture(scope="module")
def bench():
    return generate_benchmark(DIMS, n_seq=60, seed=3)


def test_clean_tone_peaks_at_class_bin():
    spec = DomainSpec("I", [1.0, 1.0], [0.0, 0.0], 0.0, [[1.0, 0.0], [0.0, 1.0]], 0.0)
    recs = generate_domain(spec, 20, DIMS, seed=1)
    for r in recs:
        mags = np.abs(np.fft.rfft(r.x, axis=-1))
        peaks = mags.argmax(axis=-1)
        expected = np.array([tone_frequency(c) for c in r.y_clean])
        assert np.array_equal(peaks, np.repeat(expected[:, None], DIMS.channels, axis=1))


def test_identity_markov_gives_constant_sequences():
    chain = StageMarkov(np.full(5, 0.2), np.eye(5))
    labels = chain.sample(np.random.default_rng(0), 30, 8)
    assert np.all(labels == labels[:, :1])


def test_default_markov_rows_and_stickiness():
    chain = StageMarkov.default()
    assert np.all(np.abs(chain.transition.sum(axis=1) - 1) <= 1e-12)
    assert np.allclose(np.diag(chain.transition), 0.7)
    with pytest.raises(ContractError):
        StageMarkov(np.full(2, 0.5), [[0.5, 0.6], [0.5, 0.5]])


def test_spectral_oracle_certifies_learnability(bench):
    for d in DOMAIN_NAMES:
        x, _, y, _, _ = stack_records(bench[d])
        assert (oracle_predict(x) == y).mean() >= 0.95, d


def test_interclass_spectral_cosine_headroom():
    spec = DomainSpec("I", [1.0, 1.0], [0.0, 0.0], 0.0, [[1.0, 0.0], [0.0, 1.0]], 0.0)
    x, _, y, _, _ = stack_records(generate_domain(spec, 100, DIMS, seed=2))
    mags = np.abs(np.fft.rfft(x, axis=-1)).reshape(-1, DIMS.channels * (DIMS.epoch_len // 2 + 1))
    means = np.stack([mags[y.reshape(-1) == c].mean(axis=0) for c in range(5)])
    unit = means / np.linalg.norm(means, axis=1, keepdims=True)
    cos = unit @ unit.T
    assert cos[~np.eye(5, dtype=bool)].mean() < 0.9


def test_generation_is_deterministic():
    spec = default_domains()[2]
    a = generate_domain(spec, 5, DIMS, seed=9)
    b = generate_domain(spec, 5, DIMS, seed=9)
    c = generate_domain(spec, 5, DIMS, seed=10)
    assert a == b and a != c


def test_shifted_domains_are_misaligned_for_untrained_encoder(bench):
    params = init_params(DIMS, 0)
    feats = [encode(stack_records(bench[d][:20])[0], params).data.reshape(-1, DIMS.D) for d in ("I", "V")]
    assert epoch_align_loss(feats).item() > 0


def test_sample_ids_unique_and_stable(bench):
    ids = [r.sample_id for d in DOMAIN_NAMES for r in bench[d]]
    assert len(set(ids)) == len(ids)
    again = generate_benchmark(DIMS, n_seq=60, seed=3)
    assert ids == [r.sample_id for d in DOMAIN_NAMES for r in again[d]]


def test_record_immutability_and_single_noisy_assignment(bench):
    r = SequenceRecord(1, "I", np.zeros((8, 2, 64)), np.zeros(8, int))
    with pytest.raises(ValueError):
        r.x[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        r.y_clean[0] = 3
    r.set_noisy(np.ones(8, int))
    assert np.array_equal(r.labels, np.ones(8))
    with pytest.raises(ContractError):
        r.set_noisy(np.zeros(8, int))


@pytest.mark.parametrize("bad", [dict(gain=[0.0, 1.0]), dict(noise_floor_std=-1.0),
                                 dict(channel_mix=[[1.0, 2.0], [0.5, 1.0]]), dict(class_freq_jitter=0.6)])
def test_domain_spec_validation(bad):
    with pytest.raises(ContractError):
        DomainSpec("X", **bad)


def _random_records(n, rng):
    out = []
    for i in range(n):
        r = SequenceRecord(int(rng.integers(0, 2 ** 63)), DOMAIN_NAMES[i % 5], rng.normal(size=(8, 2, 64)),
                           rng.integers(0, 5, 8))
        if i % 2:
            r.set_noisy(rng.integers(0, 5, 8))
        out.append(r)
    return out


def test_round_trip_100_records(tmp_path, rng):
    recs = _random_records(100, rng)
    path = tmp_path / "d.nldg"
    write_dataset(recs, path, DIMS, meta={"seed": 5})
    back, header = read_dataset(path, with_header=True)
    assert back == recs
    assert header["meta"] == {"seed": 5} and header["n_records"] == 100
    assert all(a.x.tobytes() == b.x.tobytes() for a, b in zip(recs, back))


def test_truncated_file_raises_parse_error(tmp_path, rng):
    path = tmp_path / "d.nldg"
    write_dataset(_random_records(3, rng), path, DIMS)
    data = path.read_bytes()
    for cut in (3, 20, len(data) - 1):
        (tmp_path / "t.nldg").write_bytes(data[:cut])
        with pytest.raises(ParseError) as info:
            read_dataset(tmp_path / "t.nldg")
        assert info.value.offset is not None


def test_trailing_bytes_and_bad_magic(tmp_path, rng):
    path = tmp_path / "d.nldg"
    write_dataset(_random_records(2, rng), path, DIMS)
    data = path.read_bytes()
    (tmp_path / "x.nldg").write_bytes(data + b"\0")
    with pytest.raises(ParseError):
        read_dataset(tmp_path / "x.nldg")
    (tmp_path / "y.nldg").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ParseError):
        read_dataset(tmp_path / "y.nldg")


def test_version_mismatch(tmp_path, rng):
    path = tmp_path / "d.nldg"
    write_dataset(_random_records(1, rng), path, DIMS)
    data = bytearray(path.read_bytes())
    data[4:6] = (99).to_bytes(2, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(VersionError):
        read_dataset(path)


def test_empty_dataset_is_valid(tmp_path):
    path = tmp_path / "e.nldg"
    write_dataset([], path, DIMS)
    assert read_dataset(path) == []
    header, _ = read_header(path.read_bytes())
    assert header["dims"]["T"] == 8


def test_lodo_split_target_three(bench):
    train, test = lodo_split(bench, "III")
    assert {r.domain_id for r in train} == {"I", "II", "IV", "V"}
    assert {r.domain_id for r in test} == {"III"}
    train_ids, test_ids = {r.sample_id for r in train}, {r.sample_id for r in test}
    assert not train_ids & test_ids
    assert train_ids | test_ids == {r.sample_id for d in bench.values() for r in d}


def test_lodo_split_errors(bench):
    with pytest.raises(ConfigError):
        lodo_split(bench, "VI")
    with pytest.raises(ConfigError):
        lodo_split({k: bench[k] for k in ("I", "II")}, "I")


def test_records_by_domain_groups(bench):
    flat = [r for d in DOMAIN_NAMES for r in bench[d]]
    grouped = records_by_domain(flat)
    assert {k: len(v) for k, v in grouped.items()} == {d: 60 for d in DOMAIN_NAMES}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_markov_labels_in_range(seed, n):
    labels = StageMarkov.default().sample(np.random.default_rng(seed), n, 8)
    assert labels.shape == (n, 8) and labels.min() >= 0 and labels.max() < 5
