import json

import pytest

from stefanpy import cli
from stefanpy.cli import main
from stefanpy.experiment import ExperimentThresholdException
from stefanpy.manifest import read_manifest
from stefanpy.solver import NumericalBlowUpException

SMALL = ['--override', 'grid.n=16', '--override', 'noise.N=2', '--override', 'time.T=0.002']


class TestConfigCommand(object):
    def test_example(self, capsys):
        assert main(['config', '--example']) == cli.EXIT_OK
        out = capsys.readouterr().out

        assert out.startswith('phase:')
        assert 'experiment:' in out

    def test_resolved(self, capsys):
        assert main(['config', '--override', 'grid.n=32']) == cli.EXIT_OK

        assert json.loads(capsys.readouterr().out)['grid'] == {'n': 32}

    def test_invalid(self, capsys):
        assert main(['config', '--override', 'grid.n=31']) == cli.EXIT_CONFIG
        assert 'grid.n' in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(['config', '--config', str(tmp_path / 'nope.yaml')]) == cli.EXIT_CONFIG


class TestRunCommands(object):
    def test_simulate(self, tmp_path):
        out = tmp_path / 'sim'
        assert main(['simulate', '--out', str(out), '--seed', '5'] + SMALL) == cli.EXIT_OK

        manifest = read_manifest(out / 'manifest.json')
        assert manifest['command'] == 'simulate'
        assert manifest['config']['noise']['seed'] == 5
        assert manifest['status'] == {'simulate': 'complete'}
        assert 'diagnostics.csv' in manifest['artifacts']
        assert 'snapshots/state_00000.stfn' in manifest['artifacts']

    def test_output_directory_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / 'env'))
        assert main(['simulate', '--override', 'output.snapshots=false'] + SMALL) == cli.EXIT_OK

        assert (tmp_path / 'env' / 'manifest.json').exists()
        assert not (tmp_path / 'env' / 'snapshots').exists()

    def test_limit_with_enhancement(self, tmp_path):
        out = tmp_path / 'limit'
        assert main(['limit', '--out', str(out), '--with-enhancement'] + SMALL) == cli.EXIT_OK

        manifest = read_manifest(out / 'manifest.json')
        assert 'enhancement.csv' in manifest['artifacts']
        assert manifest['extra']['coefficient_gap'] >= 0

    def test_converge(self, tmp_path, capsys):
        out = tmp_path / 'conv'
        args = ['converge', '--out', str(out), '--threads', '2',
                '--override', 'experiment.Ns=[2,4]', '--override', 'experiment.replicas=2'] + SMALL
        assert main(args) == cli.EXIT_OK

        assert (out / 'report.json').exists()
        assert (out / 'chart.vl.json').exists()
        assert 'N=   4' in capsys.readouterr().out

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def blow_up(*args, **kwargs):
            raise NumericalBlowUpException(3, 3e-4, 0)

        monkeypatch.setattr(cli, 'simulate_path', blow_up)
        out = tmp_path / 'sim'
        assert main(['simulate', '--out', str(out)] + SMALL) == cli.EXIT_NUMERICAL

        assert read_manifest(out / 'manifest.json')['status'] == {'simulate': 'failed'}

    def test_threshold(self, tmp_path, monkeypatch, capsys):
        def too_many(*args, **kwargs):
            raise ExperimentThresholdException(4, ["replica 0: non-finite"], 0.5, 0.01)

        monkeypatch.setattr(cli, 'run_convergence', too_many)
        assert main(['converge', '--out', str(tmp_path)] + SMALL) == cli.EXIT_THRESHOLD
        assert 'replica 0: non-finite' in capsys.readouterr().err


class TestValidateCommand(object):
    def test_selected_properties(self, capsys, tmp_path):
        graph = tmp_path / 'props.gv'
        code = main(['validate', '--json', '--graph', str(graph),
                     '--property', 'mean_conservation', '--property', 'coefficient_constraints'])

        assert code == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)['passed'] is True
        assert 'coefficient_constraints -> structure_identity' in graph.read_text()

    def test_broken_symmetry(self, capsys):
        code = main(['validate', '--broken-symmetry',
                     '--property', 'coefficient_constraints', '--property', 'structure_identity'])

        assert code == cli.EXIT_PROPERTY_FAILED
        assert 'FAIL' in capsys.readouterr().out

    def test_refuses_configuration_flags(self, capsys):
        with pytest.raises(SystemExit):
            main(['validate', '--override', 'grid.n=16', '--property', 'mean_conservation'])

        assert '--override' in capsys.readouterr().err
