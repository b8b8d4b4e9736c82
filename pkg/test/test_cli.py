import filecmp
import json
import math
import os
import sys

from click.testing import CliRunner

try:
    from confdim.cli import __version__, cli
except ImportError:
    sys.path.append("./")
    from confdim.cli import __version__, cli

DIR = os.path.abspath("./test/test_files/cli/")


def fixture(name):
    return os.path.join(DIR, name)


def run(*args):
    return CliRunner().invoke(cli, list(args), obj={})


def load(path):
    with open(path, 'r', encoding='utf-8') as file:
        return json.load(file)


def test_version():
    result = run('--version')
    assert result.exit_code == 0
    assert f"confdim v{__version__}" in result.output


### generate ###

def test_generate_cantor():
    with CliRunner().isolated_filesystem():
        result = run('generate', fixture('cantor.json'), '-o', 'out')
        assert result.exit_code == 0
        space = load('out/space.json')
        assert space['type'] == 'cloud' and len(space['points']) == 128
        cert = load('out/certificate.json')
        assert cert['descriptor']['kind'] == 'cantor'
        assert math.isclose(cert['exact_hausdorff_dimension'], math.log(2) / math.log(3), rel_tol=1e-9)
        assert cert['certificate']['L0'] >= 4

def test_generate_carpet():
    with CliRunner().isolated_filesystem():
        assert run('generate', fixture('carpet.json')).exit_code == 0
        assert len(load('space.json')['points']) == 16

def test_generate_over_budget():
    with CliRunner().isolated_filesystem():
        result = run('generate', fixture('huge.json'))
        assert result.exit_code == 3
        assert "error:" in result.output and "depth 16" in result.output
        assert not os.path.exists('space.json')

def test_generate_bad_descriptor():
    with CliRunner().isolated_filesystem():
        assert run('generate', fixture('sphere.json')).exit_code == 2
        assert run('generate', fixture('broken.json')).exit_code == 2


### diagnostics ###

def test_regularity():
    with CliRunner().isolated_filesystem():
        result = run('regularity', fixture('cantor.json'), '--base', '3', '-o', 'report.json')
        assert result.exit_code == 0
        report = load('report.json')
        assert 0.58 <= report['ahlfors_exponent'] <= 0.68
        assert report['exact_hausdorff_dimension'] > 0.63

def test_hyperbolicity_of_tree():
    with CliRunner().isolated_filesystem():
        assert run('hyperbolicity', fixture('tree.json'), '-o', 'delta.json').exit_code == 0
        report = load('delta.json')
        assert report['delta'] == 0
        assert report['gromov_product_violations'] == 0
        assert not report['approximate']

def test_visual():
    with CliRunner().isolated_filesystem():
        assert run('visual', fixture('tree.json'), '--a', str(math.log(2)), '-o', 'visual.json').exit_code == 0
        space = load('visual.json')
        assert space['type'] == 'matrix'
        assert space['labels'] == [3, 4, 5, 6]
        assert math.isclose(space['dist'][0][1], 0.5, rel_tol=1e-9)
        assert math.isclose(space['dist'][0][2], 1.0, rel_tol=1e-9)

def test_visual_needs_positive_a():
    assert run('visual', fixture('tree.json'), '--a', '0').exit_code == 2


### dimension ###

def test_dimension_threads_do_not_change_output():
    with CliRunner().isolated_filesystem():
        assert run('dimension', fixture('cantor.json'), '--base', '3', '--threads', '1', '-o', 'one').exit_code == 0
        assert run('dimension', fixture('cantor.json'), '--base', '3', '--threads', '8', '-o', 'many').exit_code == 0
        assert filecmp.cmp('one/estimate.json', 'many/estimate.json', shallow=False)
        estimate = load('one/estimate.json')
        assert estimate['cd_high'] <= 0.25
        assert estimate['descriptor']['kind'] == 'cantor'

def test_dimension_csv():
    with CliRunner().isolated_filesystem():
        assert run('dimension', fixture('cantor.json'), '--base', '3', '--format', 'csv').exit_code == 0
        with open('curves.csv', 'r', encoding='utf-8') as file:
            lines = file.read().splitlines()
        assert lines[0].startswith('k,p,value')
        assert len(lines) == 1 + 3 * len(load('estimate.json')['curves'])

def test_dimension_inconclusive_grid():
    with CliRunner().isolated_filesystem():
        result = run('dimension', fixture('cantor.json'), '--base', '3', '--grid', '0.5', '--grid', '1')
        assert result.exit_code == 4
        assert load('estimate.json')['inconclusive']

def test_dimension_trend_mode():
    with CliRunner().isolated_filesystem():
        result = run('-v', 'dimension', fixture('cantor.json'), '--base', '3', '--lambda', '1',
                     '--decay-mode', 'trend', '--k-tail', '2', '--rate-band', '0.1')
        assert result.exit_code == 0
        assert 'bracket: [0.1, 0.1]' in result.output
        estimate = load('estimate.json')
        assert estimate['config']['decay_mode'] == 'trend'
        assert estimate['config']['rate_band'] == 0.1
        assert estimate['cd_high'] <= 0.25
