import pytest

from kernopt.actions import (
    ActionCatalog,
    ActionParseError,
    OutOfCatalogError,
    enumerate_actions,
    parse_action,
    parse_action_text,
    render_action,
)
from kernopt.analysis import extract_regions
from kernopt.model import (
    ActionKind,
    CodeRegion,
    KernelSource,
    OptimizationAction,
    SourceLanguage,
    STOP_ACTION,
    content_hash,
)


def src(text: str) -> KernelSource:
    return KernelSource(SourceLanguage.KERNEL_DSL, text)


def test_render_examples():
    assert render_action(OptimizationAction(ActionKind.FUSION,
                                            CodeRegion(15, 20))) == "fuse lines 15-20"
    assert render_action(STOP_ACTION) == "stop"
    assert render_action(OptimizationAction(ActionKind.TILING,
                                            CodeRegion(3, 9))) == "tile lines 3-9"
    assert render_action(OptimizationAction(ActionKind.PIPELINE,
                                            CodeRegion(1, 2))) == "pipeline lines 1-2"
    assert render_action(OptimizationAction(ActionKind.REORDERING,
                                            CodeRegion(4, 8))) == "reorder lines 4-8"


def test_catalog_floor_is_stop_only(make_observation):
    obs = make_observation(src("return x"))
    catalog = enumerate_actions(obs)
    assert [a.kind for a in catalog.actions] == [ActionKind.STOP]


def test_catalog_single_fusion_candidate(make_observation):
    obs = make_observation(src("a = relu(x)\nb = scale(a, 2)"))
    catalog = enumerate_actions(obs)
    assert [render_action(a) for a in catalog.actions] == ["fuse lines 1-2", "stop"]


def test_catalog_size_matches_candidate_sum(make_observation, mlp_source):
    obs = make_observation(mlp_source)
    catalog = enumerate_actions(obs)
    expected = 1 + sum(
        len(extract_regions(mlp_source, kind))
        for kind in (ActionKind.TILING, ActionKind.FUSION, ActionKind.PIPELINE,
                     ActionKind.REORDERING))
    assert len(catalog) == expected == 17
    assert catalog.source_fingerprint == content_hash(mlp_source.text)


def test_catalog_ordering_and_single_stop(make_observation, mlp_source):
    catalog = enumerate_actions(make_observation(mlp_source))
    keys = [a.sort_key for a in catalog.actions]
    assert keys == sorted(keys)
    assert catalog.actions[-1].kind is ActionKind.STOP
    assert sum(1 for a in catalog.actions if a.kind is ActionKind.STOP) == 1


def test_catalog_determinism(make_observation, mlp_source):
    first = enumerate_actions(make_observation(mlp_source))
    second = enumerate_actions(make_observation(mlp_source))
    assert first == second


def test_catalog_rejects_duplicates():
    action = OptimizationAction(ActionKind.FUSION, CodeRegion(1, 2))
    with pytest.raises(ValueError, match="duplicate"):
        ActionCatalog(actions=(action, action, STOP_ACTION), source_fingerprint="x")
    with pytest.raises(ValueError, match="STOP"):
        ActionCatalog(actions=(action,), source_fingerprint="x")


def test_parse_render_round_trip(make_observation, mlp_source):
    catalog = enumerate_actions(make_observation(mlp_source))
    for action in catalog.actions:
        assert parse_action(render_action(action), catalog) is \
            catalog.actions[catalog.index_of(action)]


def test_parse_rejects_bad_grammar(make_observation, mlp_source):
    catalog = enumerate_actions(make_observation(mlp_source))
    for text in ("explode lines 1-2", "fuse line 1-2", "fuse lines 1:2",
                 "fuse lines", "stop now"):
        with pytest.raises(ActionParseError):
            parse_action(text, catalog)


def test_parse_rejects_out_of_catalog(make_observation):
    obs = make_observation(src("\n".join(f"t{i} = f(t{i - 1})"
                                         for i in range(1, 11))))
    catalog = enumerate_actions(obs)
    with pytest.raises(OutOfCatalogError):
        parse_action("fuse lines 1-99", catalog)


def test_parse_action_text_without_catalog():
    action = parse_action_text("reorder lines 2-6")
    assert action.kind is ActionKind.REORDERING
    assert action.region.span == (2, 6)
    with pytest.raises(ActionParseError):
        parse_action_text("reorder lines 6-2")
