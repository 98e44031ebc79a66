import json
import os
import pytest
from main import run
from tsv_writer import Manifest


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / 'out')


def build(chain_dir, out_dir, height_to=39, *extra):
    return run(['build', '--fixture-dir', chain_dir, '--out-dir', out_dir, '--from', '0', '--to', str(height_to),
                '--batch-size', '8', *extra])


def test_build_prints_manifest_path(chain_dir, out_dir, capsys):
    assert build(chain_dir, out_dir) == 0
    manifest_path = os.path.join(out_dir, 'manifest.json')
    assert capsys.readouterr().out.strip() == manifest_path
    manifest = Manifest.load(manifest_path)
    assert (manifest.min_height, manifest.max_height) == (0, 39)
    assert len(manifest.segments) == 5


def test_append_continues_after_last_height(chain_dir, out_dir):
    assert build(chain_dir, out_dir, 19) == 0
    assert run(['append', '--fixture-dir', chain_dir, '--out-dir', out_dir, '--to', '39', '--batch-size', '8']) == 0
    manifest = Manifest.load(os.path.join(out_dir, 'manifest.json'))
    assert manifest.max_height == 39
    # Nothing left to add
    assert run(['append', '--fixture-dir', chain_dir, '--out-dir', out_dir, '--to', '39']) == 0


def test_sample_writes_features_and_report(chain_dir, out_dir, tmp_path, capsys):
    assert build(chain_dir, out_dir) == 0
    sample_dir = str(tmp_path / 'samples')
    code = run(['sample', '--out-dir', out_dir, '--method', 'bfs', '--count', '3', '--hops', '1', '--seed', '5',
                '--sample-out-dir', sample_dir])
    assert code == 0
    assert capsys.readouterr().out.strip().endswith('3 written, 0 rejected, 0 failed')
    with open(os.path.join(sample_dir, 'report.json'), encoding='utf-8') as f:
        report = json.load(f)
    assert report['method'] == 'bfs'
    assert report['seed'] == 5
    assert [entry['sample_id'] for entry in report['written']] == ['s000000', 's000001', 's000002']
    with open(os.path.join(sample_dir, 'labels.tsv'), encoding='utf-8') as f:
        assert len(f.read().splitlines()) == 2 + 3


def test_sample_with_unknown_root_is_reported(chain_dir, out_dir, tmp_path):
    assert build(chain_dir, out_dir) == 0
    sample_dir = str(tmp_path / 'samples')
    assert run(['sample', '--out-dir', out_dir, '--roots', 'tx:unknown', '--sample-out-dir', sample_dir]) == 0
    with open(os.path.join(sample_dir, 'report.json'), encoding='utf-8') as f:
        report = json.load(f)
    assert report['written'] == []
    assert report['errors'][0]['root'] == 'tx:unknown'


def test_profile_writes_stats_and_degrees(chain_dir, out_dir, tmp_path):
    assert build(chain_dir, out_dir) == 0
    profile_dir = str(tmp_path / 'profile')
    code = run(['profile', '--fixture-dir', chain_dir, '--from', '0', '--to', '39', '--out-dir', out_dir,
                '--profile-out-dir', profile_dir])
    assert code == 0
    names = set(os.listdir(profile_dir))
    assert {'block_stats.tsv', 'script_shares.tsv', 'rolling_means.tsv', 'summary.json'} <= names
    assert {'degrees_Block.tsv', 'degrees_Tx.tsv', 'degrees_Script.tsv', 'degree_marginals_Tx.tsv'} <= names

    with open(os.path.join(profile_dir, 'block_stats.tsv'), encoding='utf-8') as f:
        assert len(f.read().splitlines()) == 1 + 40
    with open(os.path.join(profile_dir, 'summary.json'), encoding='utf-8') as f:
        summary = json.load(f)
    assert summary['blocks'] == 40
    assert summary['residual']['flagged'] == []
    assert summary['median_time_past']['mismatches'] == 0
    assert len(summary['degrees']) == 3


def test_profile_of_empty_range_writes_headers(chain_dir, tmp_path):
    profile_dir = str(tmp_path / 'profile')
    code = run(['profile', '--fixture-dir', chain_dir, '--from', '5', '--to', '4', '--no-degrees',
                '--profile-out-dir', profile_dir])
    assert code == 0
    with open(os.path.join(profile_dir, 'block_stats.tsv'), encoding='utf-8') as f:
        assert len(f.read().splitlines()) == 1


def test_config_dump(capsys):
    assert run(['--set', 'batch_size=12', 'config', 'dump']) == 0
    assert 'BATCH_SIZE=12\n' in capsys.readouterr().out


def test_global_options_after_subcommand(tmp_path, capsys):
    config_file = tmp_path / 'blockgraph.env'
    config_file.write_text('ROLLING_WINDOW=9\n', encoding='utf-8')
    argv = ['--set', 'batch_size=12', 'config', 'dump', '--set', 'workers=3', '--config', str(config_file),
            '--log-level', 'WARNING']
    assert run(argv) == 0
    out = capsys.readouterr().out
    assert 'BATCH_SIZE=12\n' in out
    assert 'WORKERS=3\n' in out
    assert 'ROLLING_WINDOW=9\n' in out
    assert 'LOG_LEVEL=WARNING\n' in out


def test_config_file_before_subcommand_is_kept(tmp_path, capsys):
    config_file = tmp_path / 'blockgraph.env'
    config_file.write_text('ROLLING_WINDOW=9\n', encoding='utf-8')
    assert run(['--config', str(config_file), 'config', 'dump']) == 0
    assert 'ROLLING_WINDOW=9\n' in capsys.readouterr().out


@pytest.mark.parametrize('argv', [
    [],
    ['build', '--no-such-flag'],
    ['build', '--from', 'x'],
    ['sample', '--method', 'random'],
    ['config', 'show'],
])
def test_usage_errors_exit_1(argv):
    assert run(argv) == 1


@pytest.mark.parametrize('argv', [
    ['build', '--out-dir', 'unused'],
    ['--set', 'NO_SUCH_KEY=1', 'config', 'dump'],
    ['--set', 'BATCH_SIZE', 'config', 'dump'],
    ['build', '--fixture-dir', '.', '--compression', 'gzip', '--set', 'COMPRESSION=zstd'],
])
def test_configuration_errors_exit_1(argv):
    assert run(argv) == 1


def test_empty_build_range_exits_3(chain_dir, out_dir):
    assert run(['build', '--fixture-dir', chain_dir, '--out-dir', out_dir, '--from', '9', '--to', '3']) == 3


def test_missing_fixture_height_exits_3(chain_dir, out_dir):
    os.remove(os.path.join(chain_dir, '20.json'))
    assert build(chain_dir, out_dir) == 3


def test_malformed_fixture_exits_2(chain_dir, out_dir):
    with open(os.path.join(chain_dir, '5.json'), 'w', encoding='utf-8') as f:
        f.write('{"hash": ')
    assert build(chain_dir, out_dir) == 2


def test_rebuild_is_byte_identical(chain_dir, tmp_path):
    first, second = str(tmp_path / 'first'), str(tmp_path / 'second')
    assert build(chain_dir, first) == 0
    assert build(chain_dir, second) == 0
    first_digests = {entry.path: entry.sha256 for entry in Manifest.load(os.path.join(first, 'manifest.json')).all_files()}
    second_digests = {entry.path: entry.sha256 for entry in Manifest.load(os.path.join(second, 'manifest.json')).all_files()}
    assert first_digests == second_digests


def test_sampling_rerun_is_byte_identical(chain_dir, out_dir, tmp_path):
    assert build(chain_dir, out_dir) == 0
    outputs = []
    for name in ('a', 'b'):
        sample_dir = str(tmp_path / name)
        assert run(['sample', '--out-dir', out_dir, '--count', '4', '--seed', '9', '--sample-out-dir', sample_dir]) == 0
        files = {}
        for directory, _, names in os.walk(sample_dir):
            for file_name in names:
                path = os.path.join(directory, file_name)
                with open(path, 'rb') as f:
                    files[os.path.relpath(path, sample_dir)] = f.read()
        outputs.append(files)
    assert outputs[0] == outputs[1]


def test_profile_of_block_2817(fixtures_dir, tmp_path):
    profile_dir = str(tmp_path / 'profile')
    code = run(['profile', '--fixture-dir', fixtures_dir, '--from', '2817', '--to', '2817', '--no-degrees',
                '--profile-out-dir', profile_dir])
    assert code == 0
    with open(os.path.join(profile_dir, 'block_stats.tsv'), encoding='utf-8') as f:
        header, row = [line.split('\t') for line in f.read().splitlines()]
    assert row[header.index('fee_total')] == '201000000'
    assert row[header.index('height')] == '2817'
