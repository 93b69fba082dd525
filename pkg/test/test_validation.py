import json

import pytest

from stefanpy.validation import (CyclicPrerequisiteException, DuplicatePropertyException,
                                 Measurement, PropertyGraph, PropertyNotFoundException,
                                 PropertySuite, broken_symmetry_family, check_coefficient_constraints,
                                 check_structure_identity, default_suite)


@pytest.fixture
def empty_graph():
    return PropertyGraph()


@pytest.fixture
def graph():
    g = PropertyGraph()
    for x in range(1, 8):
        g.add_node(x)

    return g


@pytest.fixture
def graph_2():
    g = PropertyGraph()
    for x in range(1, 8):
        g.add_node(x)

    g.add_edge(1, 3)
    g.add_edge(3, 5)
    g.add_edge(5, 7)
    g.add_edge(4, 6)
    g.add_edge(6, 2)
    g.add_edge(2, 1)

    return g


@pytest.fixture
def graph_3():
    g = PropertyGraph()
    for x in range(1, 8):
        g.add_node(x)

    g.add_edge(1, 3)
    g.add_edge(2, 3)
    g.add_edge(3, 4)
    g.add_edge(3, 5)
    g.add_edge(3, 6)
    g.add_edge(5, 7)
    g.add_edge(6, 7)

    return g


class TestPropertyGraph(object):
    def test_add_nodes(self, empty_graph):
        for x in range(1, 5):
            empty_graph.add_node(x)

        assert all([x in empty_graph for x in range(1, 5)])
        assert len(empty_graph) == 4

    def test_duplicate_node(self, graph):
        with pytest.raises(DuplicatePropertyException):
            graph.add_node(3)

    def test_unknown_node(self, graph):
        with pytest.raises(PropertyNotFoundException):
            graph.add_edge(1, 9)
        with pytest.raises(PropertyNotFoundException):
            graph.prerequisites(9)

    def test_simple_insert_ordering(self, graph):
        assert graph.order() == list(range(1, 8))

    def test_add_edge_no_reorder(self, graph):
        graph.add_edge(1, 7)
        graph.add_edge(2, 6)
        graph.add_edge(3, 5)

        assert graph.order() == [1, 2, 3, 4, 5, 6, 7]

    def test_add_edge_reorder(self, graph):
        graph.add_edge(7, 1)
        graph.add_edge(6, 2)

        assert graph.order() == [7, 6, 3, 4, 5, 2, 1]

    def test_add_edge_reorder_2(self, graph):
        graph.add_edge(1, 3)
        graph.add_edge(3, 5)
        graph.add_edge(5, 7)

        assert graph.order() == [1, 2, 3, 4, 5, 6, 7]

        graph.add_edge(4, 6)
        graph.add_edge(6, 2)

        assert graph.order() == [1, 4, 3, 6, 5, 2, 7]

        graph.add_edge(2, 1)

        assert graph.order() == [4, 6, 2, 1, 3, 5, 7]

    def test_existing_edge(self, graph_2):
        assert not graph_2.add_edge(1, 3)

    def test_cycle_is_refused(self, graph_2):
        before = graph_2.order()

        with pytest.raises(CyclicPrerequisiteException):
            graph_2.add_edge(7, 4)
        with pytest.raises(CyclicPrerequisiteException):
            graph_2.add_edge(5, 5)

        assert graph_2.order() == before
        assert 4 not in graph_2.descendants(7)

    def test_descendants(self, graph_2):
        assert graph_2.descendants(4) == [6, 2, 1, 3, 5, 7]
        assert graph_2.descendants(1) == [3, 5, 7]

    def test_descendants_3(self, graph_3):
        assert graph_3.order() == [1, 2, 3, 4, 5, 6, 7]

        assert graph_3.descendants(1) == [3, 4, 5, 6, 7]
        assert graph_3.descendants(3) == [4, 5, 6, 7]
        assert graph_3.descendants(4) == []
        assert graph_3.descendants(6) == [7]

    def test_prerequisites(self, graph_3):
        assert graph_3.prerequisites(3) == {1, 2}
        assert graph_3.prerequisites(7) == {5, 6}
        assert list(graph_3.edges())[0] == (1, 3)


@pytest.fixture
def toy_suite():
    def boom():
        raise RuntimeError("no")

    suite = PropertySuite()
    suite.add('fails', lambda: Measurement(2.0, 1.0))
    suite.add('passes', lambda: Measurement(0.5, 1.0))
    suite.add('blocked', lambda: Measurement(0.0, 1.0), requires=['fails'])
    suite.add('raises', boom, requires=['passes'])
    suite.add('after_error', lambda: Measurement(0.0, 1.0), requires=['raises'])
    return suite


class TestPropertySuite(object):
    def test_statuses(self, toy_suite):
        report = toy_suite.run()
        status = {r.name: r.status for r in report.results}

        assert status == {'fails': 'fail', 'passes': 'pass', 'blocked': 'skipped',
                          'raises': 'error', 'after_error': 'skipped'}
        assert not report.passed
        assert report.failed == ['fails', 'blocked', 'raises', 'after_error']

    def test_only(self, toy_suite):
        report = toy_suite.run(only=['passes'])

        assert [r.name for r in report.results] == ['passes']
        assert report.passed

    def test_report_formats(self, toy_suite):
        report = toy_suite.run()
        data = json.loads(report.to_json())

        assert data['passed'] is False
        assert [p['name'] for p in data['properties']] == [r.name for r in report.results]
        assert 'SKIP' in report.to_text()

    def test_skip_reaches_every_descendant(self):
        suite = PropertySuite()
        suite.add('root', lambda: Measurement(2.0, 1.0))
        suite.add('middle', lambda: Measurement(0.0, 1.0), requires=['root'])
        suite.add('leaf', lambda: Measurement(0.0, 1.0), requires=['middle'])
        suite.add('apart', lambda: Measurement(0.0, 1.0))
        results = {r.name: r for r in suite.run().results}

        assert results['leaf'].status == 'skipped'
        assert 'root' in results['leaf'].detail
        assert results['apart'].status == 'pass'

    def test_nan_fails(self):
        assert not Measurement(float('nan'), 1.0).passed

    def test_digraph(self, toy_suite):
        source = toy_suite.digraph(toy_suite.run()).source

        assert 'fails -> blocked' in source
        assert 'raises -> after_error' in source
        assert 'salmon' in source


class TestChecks(object):
    def test_coefficient_constraints(self):
        assert check_coefficient_constraints(max_N=16).passed

    def test_structure_identity(self):
        assert check_structure_identity(radii=range(1, 6), points=10).passed

    def test_broken_symmetry_is_detected(self):
        assert broken_symmetry_family(3).normalization() == pytest.approx(1.0)
        assert broken_symmetry_family(3).violations()
        assert not check_structure_identity(broken_symmetry_family, radii=range(1, 6),
                                            points=10).passed

    def test_fast_properties(self):
        report = default_suite().run(only=['divergence_orthogonality', 'mean_conservation',
                                           'deterministic_equivalence'])

        assert report.passed, report.to_text()
        assert len(report.results) == 3

    def test_broken_suite_skips_dependents(self):
        report = default_suite(broken_symmetry=True).run(
            only=['coefficient_constraints', 'structure_identity', 'energy_inequality'])
        status = {r.name: r.status for r in report.results}

        assert status == {'coefficient_constraints': 'pass', 'structure_identity': 'fail',
                          'energy_inequality': 'skipped'}

    @pytest.mark.slow
    def test_default_suite_passes(self):
        report = default_suite().run()

        assert report.passed, report.to_text()
