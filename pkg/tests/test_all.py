"""
关键帧检索 - 统一测试套件
包含核心、采样、打分、分布更新、检索主循环与数据源的单元测试
"""

import csv
import json
import math
import warnings
from unittest.mock import Mock, mock_open, patch

import numpy as np
import pytest
import requests

from tstar.core import (
    ConfigError, DataError, GridError, GroundedQuery, KeyframeSet, NumericalError, ParseError,
    ScoreState, ScorerError, SearchConfig, StateError, TerminalReason, VideoSource, DimensionError,
    derive_seed, load_config_from_file, timestamp_of, validate_config,
)
from tstar.data_sources import (
    FrameStore, GroundingManager, load_dataset, load_embeddings, save_embeddings,
    validate_instance_record,
)
from tstar.distribution import (
    apply_scores, mass_near, propagate_window, rebuild_probability, rescore,
)
from tstar.sampling import build_grid, weighted_sample_without_replacement
from tstar.scoring import (
    FileScorer, HttpScorer, OracleScorer, Scorer, ScorerSpec, cell_confidence, encode_reply,
    rank_reverse, score_grid, verify,
)
from tstar.search_engine import (
    SearchAborted, TemporalSearchEngine, run_search, select_topk, write_trace_csv,
)


class ZeroScorer(Scorer):
    """对所有单元格返回空检测；fail_after 次调用后抛出 ScorerError"""

    def __init__(self, fail_after=None):
        self.calls = 0
        self.fail_after = fail_after

    def get_scorer_name(self):
        return "zero"

    def detect(self, cells, query, request_type="grid"):
        self.calls += 1
        if self.fail_after is not None and self.calls > self.fail_after:
            raise ScorerError("detector crashed")
        return {cell: [] for cell, _ in cells}


class DecoyScorer(Scorer):
    """网格中每个单元格都像目标，单帧复核却全部落空"""

    def get_scorer_name(self):
        return "decoy"

    def detect(self, cells, query, request_type="grid"):
        confidence = 0.1 if request_type == "verify" else 0.9
        return {cell: [("needle", confidence)] for cell, _ in cells}


def needle_query():
    return GroundedQuery.from_labels("Where is the needle?", ["needle"])


def record(**overrides):
    base = {
        "instance_id": "inst-1", "video_id": "vid-1", "frame_count": 300, "fps": 30,
        "question": "What is on the table?", "targets": [{"label": "cup", "weight": 1.0}],
        "cues": [{"label": "table", "weight": 0.5}], "keyframe_timestamps_s": [2.5],
        "answer": "B", "split": "test",
    }
    base.update(overrides)
    return base


class TestCore:
    """领域类型与配置校验测试"""

    def setup_method(self):
        self.video = VideoSource("v", 18000, 30.0)

    def test_defaults_follow_video(self):
        """测试默认值随视频推导"""
        cfg = SearchConfig.for_video(self.video)
        assert cfg.grid_side == 8
        assert cfg.budget == 1024
        assert cfg.window == 75
        assert cfg.theta == 0.6
        assert cfg.k == 8
        assert cfg.prob_floor == pytest.approx(0.1 / 18000)
        assert cfg.max_iterations == math.ceil(4 * 18000 / 64)

    def test_short_video_budget(self):
        cfg = SearchConfig.for_video(VideoSource("short", 500, 10.0))
        assert cfg.budget == 500
        assert cfg.window == 25

    def test_unknown_override(self):
        with pytest.raises(ConfigError) as excinfo:
            SearchConfig.for_video(self.video, gird=4)
        assert excinfo.value.constraint == "unknown_field"

    @pytest.mark.parametrize("overrides,constraint", [
        ({"budget": 10}, "grid_exceeds_budget"),
        ({"grid_side": 4, "budget": 16, "k": 20}, "k_exceeds_budget"),
        ({"theta": 1.0}, "theta_range"),
        ({"theta": 0.0}, "theta_range"),
        ({"window": -1}, "window_non_negative"),
        ({"grid_side": 0}, "grid_side_positive"),
    ])
    def test_validate_config_constraints(self, overrides, constraint):
        """测试配置约束"""
        cfg = SearchConfig.for_video(self.video, **overrides)
        with pytest.raises(ConfigError) as excinfo:
            validate_config(cfg, self.video)
        assert excinfo.value.constraint == constraint

    def test_grid_exceeds_frame_count(self):
        video = VideoSource("tiny", 50, 1.0)
        cfg = SearchConfig.for_video(video, budget=100)
        with pytest.raises(ConfigError) as excinfo:
            validate_config(cfg, video)
        assert excinfo.value.constraint == "grid_exceeds_frame_count"

    def test_validate_returns_config(self):
        cfg = SearchConfig.for_video(self.video)
        assert validate_config(cfg, self.video) is cfg

    def test_timestamp(self):
        assert timestamp_of(30, 30.0) == 1.0
        assert timestamp_of(0, 24.0) == 0.0

    def test_derive_seed(self):
        assert derive_seed(7, "a") == derive_seed(7, "a")
        assert derive_seed(7, "a") != derive_seed(7, "b")
        assert derive_seed(7, "a") != derive_seed(8, "a")
        assert 0 <= derive_seed(2 ** 64 - 1, "x") < 2 ** 64

    def test_query_invariants(self):
        """测试查询不变量"""
        with pytest.raises(DataError):
            GroundedQuery.from_labels("q", [])
        with pytest.raises(DataError):
            GroundedQuery.from_labels("q", ["cup"], ["cup"])
        query = GroundedQuery.from_labels("q", ["cup"], ["table"])
        assert query.weight_of("cup") == 1.0
        assert query.weight_of("table") == 0.5
        assert query.weight_of("sofa") == 0.0

    def test_video_invariants(self):
        with pytest.raises(DataError):
            VideoSource("v", 0, 30.0)
        with pytest.raises(DataError):
            VideoSource("v", 10, 0.0)

    def test_keyframe_set_order(self):
        keyframes = KeyframeSet.build([(5, 0.2), (1, 0.9), (3, 0.9), (5, 0.7)], fps=2.0)
        assert keyframes.indices == [1, 3, 5]
        assert keyframes.timestamps == [0.5, 1.5, 2.5]

    def test_load_config_missing_file(self, tmp_path):
        assert load_config_from_file(str(tmp_path / "absent.json")) == {}

    @patch('builtins.open', new_callable=mock_open, read_data='{"search": ')
    def test_load_config_bad_json(self, mock_file):
        with pytest.raises(ConfigError):
            load_config_from_file("config.json")


class TestSampling:
    """采样与网格测试"""

    def setup_method(self):
        self.rng = np.random.default_rng(0)

    def test_single_support(self):
        assert weighted_sample_without_replacement([0, 0, 1, 0], 1, self.rng) == [2]

    def test_distinct_and_support(self):
        picks = weighted_sample_without_replacement([1, 1, 0, 1], 3, self.rng)
        assert sorted(picks) == [0, 1, 3]

    def test_n_larger_than_support(self):
        picks = weighted_sample_without_replacement([0, 2, 0, 5], 10, self.rng)
        assert sorted(picks) == [1, 3]

    def test_zero_weights(self):
        assert weighted_sample_without_replacement([0, 0, 0], 2, self.rng) == []
        assert weighted_sample_without_replacement([1, 2], 0, self.rng) == []

    def test_frequencies_follow_weights(self):
        """测试抽取频率与权重成正比"""
        hits = sum(weighted_sample_without_replacement([1, 3], 1, self.rng)[0] == 1 for _ in range(4000))
        assert abs(hits / 4000 - 0.75) < 0.03

    def test_build_grid_row_major(self):
        grid = build_grid([9, 3, 5], 2)
        assert grid.cells == (3, 5, 9, None)
        assert grid.cell_at(1, 0) == 9
        assert grid.filled() == [(0, 3), (1, 5), (2, 9)]

    def test_build_grid_errors(self):
        with pytest.raises(GridError):
            build_grid([1, 2, 3, 4, 5], 2)
        with pytest.raises(GridError):
            build_grid([1, 1], 2)


class TestScoring:
    """打分器测试"""

    def setup_method(self):
        self.query = GroundedQuery.from_labels("q", ["cup"], ["table"])

    def test_cell_confidence(self):
        assert cell_confidence([("cup", 0.8), ("table", 0.9)], self.query) == pytest.approx(0.8)
        assert cell_confidence([("table", 0.9)], self.query) == pytest.approx(0.45)
        assert cell_confidence([], self.query) == 0.0
        assert cell_confidence([("sofa", 1.0)], self.query) == 0.0

    def test_oracle_exact_match(self):
        """测试 σ=0 预言机只在参考帧上给 1"""
        scorer = OracleScorer({"needle": [42]}, locality_sigma=0.0)
        detections = score_grid(scorer, build_grid([10, 42, 50], 2), needle_query())
        assert detections[1] == [("needle", 1.0)]
        assert detections[0] == [("needle", 0.0)]
        assert detections[2] == [("needle", 0.0)]

    def test_oracle_decay(self):
        scorer = OracleScorer({"needle": [40, 100]}, locality_sigma=10.0)
        values = scorer.base_confidence("needle", np.array([40, 50, 95, 0]))
        assert values.tolist() == pytest.approx([1.0, math.exp(-1), math.exp(-0.5), math.exp(-4)])

    def test_oracle_label_sigmas(self):
        """测试按标签覆盖衰减尺度，未覆盖的标签沿用 locality_sigma"""
        scorer = OracleScorer({"needle": [100], "needle-cue": [100]}, locality_sigma=1.0,
                              label_sigmas={"needle-cue": 30.0})
        assert scorer.base_confidence("needle-cue", np.array([130]))[0] == pytest.approx(math.exp(-1))
        assert scorer.base_confidence("needle", np.array([130]))[0] == pytest.approx(math.exp(-30))
        with pytest.raises(ScorerError):
            OracleScorer({"needle": [1]}, label_sigmas={"needle": -1.0})

    def test_rank_reverse(self):
        reversed_values = rank_reverse(np.array([0.1, 0.9, 0.5]))
        assert reversed_values.tolist() == [0.9, 0.1, 0.5]

    def test_adversarial_oracle(self):
        """测试对抗模式下最近单元格得到最低置信度"""
        scorer = OracleScorer({"needle": [42]}, locality_sigma=10.0, heuristic_accuracy=1e-9)
        detections = score_grid(scorer, build_grid([10, 42, 200], 2), needle_query())
        confidences = {cell: items[0][1] for cell, items in detections.items()}
        assert confidences[1] == min(confidences.values())
        assert verify(scorer, 42, needle_query()) == pytest.approx(1.0)

    def test_oracle_noise_is_seeded(self):
        grid = build_grid(list(range(0, 64)), 8)
        first = score_grid(OracleScorer({"needle": [5]}, 10.0, 0.2, seed=3), grid, needle_query())
        second = score_grid(OracleScorer({"needle": [5]}, 10.0, 0.2, seed=3), grid, needle_query())
        assert first == second
        assert all(0.0 <= c <= 1.0 for items in first.values() for _, c in items)

    def test_file_scorer(self, tmp_path):
        scores = tmp_path / "scores.tsv"
        scores.write_text("3\tcup\t0.7\n3\ttable\t0.9\n8\tcup\t0.2\n", encoding="utf-8")
        scorer = FileScorer(str(scores))
        detections = score_grid(scorer, build_grid([3, 5, 8], 2), self.query)
        assert detections[0] == [("cup", 0.7), ("table", 0.9)]
        assert detections[1] == []
        assert verify(scorer, 3, self.query) == pytest.approx(0.7)

    def test_file_scorer_errors(self, tmp_path):
        with pytest.raises(ScorerError):
            FileScorer(str(tmp_path / "absent.tsv"))
        broken = tmp_path / "broken.tsv"
        broken.write_text("3\tcup\n", encoding="utf-8")
        with pytest.raises(ScorerError):
            FileScorer(str(broken))

    def test_incomplete_reply(self):
        scorer = Mock(spec=Scorer)
        scorer.detect.return_value = {0: []}
        scorer.get_scorer_name.return_value = "mock"
        with pytest.raises(ScorerError):
            score_grid(scorer, build_grid([1, 2], 2), self.query)

    def test_out_of_range_confidence(self):
        scorer = Mock(spec=Scorer)
        scorer.detect.return_value = {0: [("cup", 1.5)]}
        scorer.get_scorer_name.return_value = "mock"
        with pytest.raises(ScorerError):
            score_grid(scorer, build_grid([1], 1), self.query)

    def test_spec_parse(self):
        """测试打分器描述解析"""
        spec = ScorerSpec.parse("oracle:sigma=30,p=0.5,cost=2")
        assert spec.kind == "oracle"
        assert spec.cost_units_per_frame == 2.0
        assert spec.params == {"locality_sigma": 30.0, "heuristic_accuracy": 0.5}
        assert ScorerSpec.parse("oracle").params == {}
        assert ScorerSpec.parse("http:http://localhost:8000/score").params["url"] == "http://localhost:8000/score"
        assert ScorerSpec.parse("external:python echo.py --scores s.tsv").params["command"] == "python echo.py --scores s.tsv"
        assert ScorerSpec.parse("file:s.tsv", cost_units_per_frame=3.0).cost_units_per_frame == 3.0

    @pytest.mark.parametrize("text", ["bogus", "oracle:p=0", "oracle:p=1.5", "file:", "oracle:speed=2"])
    def test_spec_parse_errors(self, text):
        with pytest.raises(ScorerError):
            ScorerSpec.parse(text)

    @patch('requests.Session.post')
    def test_http_scorer(self, mock_post):
        mock_post.return_value = Mock(text=encode_reply({0: [("cup", 0.6)], 1: []}),
                                      raise_for_status=Mock())
        scorer = HttpScorer("http://localhost:8000/score")
        detections = score_grid(scorer, build_grid([4, 7], 2), self.query)
        assert detections == {0: [("cup", 0.6)], 1: []}
        payload = json.loads(mock_post.call_args.kwargs["data"].decode("utf-8"))
        assert payload["type"] == "grid"
        assert payload["cells"] == [{"cell": 0, "frame": 4}, {"cell": 1, "frame": 7}]

    @patch('requests.Session.post', side_effect=requests.ConnectionError("refused"))
    def test_http_scorer_failure(self, mock_post):
        scorer = HttpScorer("http://localhost:8000/score")
        with pytest.raises(ScorerError):
            score_grid(scorer, build_grid([4], 1), self.query)


class TestDistribution:
    """得分写入、窗口传播与分布重建测试"""

    def test_apply_scores(self):
        state = apply_scores(ScoreState.fresh(5), [(2, 0.8)])
        assert state.scores.tolist() == [0, 0, 0.8, 0, 0]
        assert state.unvisited.tolist() == [1, 1, 0, 1, 1]

    def test_revisit_forbidden(self):
        state = apply_scores(ScoreState.fresh(5), [(2, 0.8)])
        with pytest.raises(StateError):
            apply_scores(state, [(2, 0.8)])

    def test_apply_order_independent(self):
        first = apply_scores(ScoreState.fresh(5), [(0, 0.1), (4, 0.9)])
        second = apply_scores(ScoreState.fresh(5), [(4, 0.9), (0, 0.1)])
        assert first.scores.tolist() == second.scores.tolist()

    def test_rescore_requires_visit(self):
        state = ScoreState.fresh(5)
        with pytest.raises(StateError):
            rescore(state, 1, 0.5)
        apply_scores(state, [(1, 0.9)])
        assert rescore(state, 1, 0.2).scores[1] == pytest.approx(0.2)

    def test_propagate_window(self):
        """测试窗口传播的衰减"""
        state = apply_scores(ScoreState.fresh(5), [(2, 0.8)])
        propagate_window(state, 2, 2)
        assert state.scores.tolist() == pytest.approx([0.8 / 3, 0.4, 0.8, 0.4, 0.8 / 3])
        assert state.unvisited.tolist() == [1, 1, 0, 1, 1]

    def test_propagate_keeps_larger_neighbor(self):
        state = apply_scores(ScoreState.fresh(5), [(1, 0.9), (2, 0.8)])
        propagate_window(state, 2, 1)
        assert state.scores[1] == pytest.approx(0.9)

    def test_propagate_zero_window_and_idempotence(self):
        state = apply_scores(ScoreState.fresh(7), [(3, 0.6)])
        propagate_window(state, 3, 0)
        assert state.scores.tolist() == [0, 0, 0, 0.6, 0, 0, 0]
        propagate_window(state, 3, 2)
        once = state.scores.copy()
        propagate_window(state, 3, 2)
        assert state.scores.tolist() == once.tolist()

    def test_fresh_is_uniform(self):
        state = rebuild_probability(ScoreState.fresh(10), 0.01)
        assert state.prob == pytest.approx(np.full(10, 0.1))

    def test_single_spike(self):
        """测试单峰对称且峰值在中心"""
        state = apply_scores(ScoreState.fresh(5), [(2, 1.0)])
        propagate_window(state, 2, 1)
        rebuild_probability(state, 0.0)
        assert int(np.argmax(state.prob)) == 2
        assert state.prob[1] == pytest.approx(state.prob[3])
        assert state.prob[0] == pytest.approx(state.prob[4])
        assert state.prob.sum() == pytest.approx(1.0)

    def test_constant_scores_uniform(self):
        state = apply_scores(ScoreState.fresh(6), [(i, 0.5) for i in range(6)])
        rebuild_probability(state, 0.0)
        assert state.prob == pytest.approx(np.full(6, 1 / 6))

    def test_no_mass_on_unvisited(self):
        state = apply_scores(ScoreState.fresh(5), [(0, 0.0), (4, 0.0)])
        rebuild_probability(state, 0.0)
        assert state.prob.tolist() == pytest.approx([0, 1 / 3, 1 / 3, 1 / 3, 0])

    def test_all_visited_zero_mass(self):
        state = apply_scores(ScoreState.fresh(4), [(i, 0.0) for i in range(4)])
        with pytest.raises(NumericalError):
            rebuild_probability(state, 0.0)

    def test_random_rebuilds_stay_normalized(self):
        """测试随机更新后分布非负且归一"""
        rng = np.random.default_rng(11)
        for _ in range(50):
            state = ScoreState.fresh(200)
            frames = rng.choice(200, size=int(rng.integers(1, 60)), replace=False)
            apply_scores(state, [(int(f), float(rng.random())) for f in frames])
            for frame in frames:
                propagate_window(state, int(frame), int(rng.integers(0, 10)))
            rebuild_probability(state, float(rng.choice([0.0, 1e-4])))
            assert (state.prob >= 0).all()
            assert state.prob.sum() == pytest.approx(1.0, abs=1e-9)

    def test_no_overshoot(self):
        state = apply_scores(ScoreState.fresh(100), [(10, 0.2), (30, 1.0), (35, 0.1), (70, 0.6)])
        rebuild_probability(state, 0.0)
        unnormalized = state.prob / state.prob[30]
        assert unnormalized.max() <= 1.0 + 1e-9

    def test_near_flat_scores_stay_finite(self):
        """测试近乎平坦的极小得分不触发溢出告警，分布仍有限且归一"""
        state = apply_scores(ScoreState.fresh(20), [(i, 1e-310 * (i + 1)) for i in range(10)])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rebuild_probability(state, 1e-4)
        assert np.isfinite(state.prob).all()
        assert state.prob.sum() == pytest.approx(1.0)

    def test_mass_near(self):
        prob = np.full(10, 0.1)
        assert mass_near(prob, [2], 1) == pytest.approx(0.3)
        assert mass_near(prob, [0, 1], 1) == pytest.approx(0.3)


class TestSearchEngine:
    """检索主循环测试"""

    def setup_method(self):
        self.video = VideoSource("v", 10000, 30.0)
        self.query = needle_query()

    def test_zero_scorer_exhausts_budget(self):
        """测试全零打分时恰好两轮耗尽预算"""
        cfg = SearchConfig.for_video(self.video, budget=128)
        outcome = run_search(self.video, self.query, ZeroScorer(), cfg)
        assert outcome.iterations == 2
        assert outcome.trace.terminal_reason is TerminalReason.BUDGET_EXHAUSTED
        assert outcome.efficiency.frames_processed == 128
        assert outcome.efficiency.verify_calls == 0
        assert len(outcome.keyframes) == cfg.k

    def test_exhaustive_single_grid(self):
        video = VideoSource("small", 64, 1.0)
        cfg = SearchConfig.for_video(video, budget=64)
        outcome = run_search(video, self.query, ZeroScorer(), cfg)
        assert outcome.iterations == 1
        assert outcome.trace.terminal_reason is TerminalReason.ALL_FRAMES_VISITED
        assert sorted(outcome.trace.iterations[0].sampled_indices) == list(range(64))

    def test_max_iterations(self):
        cfg = SearchConfig.for_video(self.video, budget=640, max_iterations=3)
        outcome = run_search(self.video, self.query, ZeroScorer(), cfg)
        assert outcome.iterations == 3
        assert outcome.trace.terminal_reason is TerminalReason.MAX_ITERATIONS

    def test_finds_needle_quickly(self):
        """测试宽衰减预言机：复核通过的帧落在 σ·ln(1/θ) 之内"""
        reach = 60.0 * math.log(1 / 0.6)
        for seed in range(5):
            needle = 1234 + 1000 * seed
            cfg = SearchConfig.for_video(self.video, budget=1000, seed=seed)
            scorer = OracleScorer({"needle": [needle]}, locality_sigma=60.0, seed=seed)
            outcome = run_search(self.video, self.query, scorer, cfg)
            assert outcome.trace.terminal_reason is TerminalReason.ALL_TARGETS_FOUND
            assert outcome.iterations <= math.ceil(math.log(10000, 64)) + 5
            assert min(abs(index - needle) for index in outcome.keyframes.indices) <= reach
            assert outcome.efficiency.verify_calls >= 1

    def test_sharp_target_with_cue_hits_exact_frame(self):
        """测试目标只在真值帧可复核、线索宽衰减时，真值帧进入关键帧"""
        query = GroundedQuery.from_labels("Where is the needle?", ["needle"], ["needle-cue"])
        for seed in range(5):
            needle = 1234 + 1000 * seed
            cfg = SearchConfig.for_video(self.video, budget=1000, seed=seed)
            scorer = OracleScorer({"needle": [needle], "needle-cue": [needle]}, locality_sigma=1.0,
                                  label_sigmas={"needle-cue": 30.0}, seed=seed)
            outcome = run_search(self.video, query, scorer, cfg)
            assert outcome.trace.terminal_reason is TerminalReason.ALL_TARGETS_FOUND
            assert needle in outcome.keyframes.indices
            assert outcome.iterations <= math.ceil(math.log(10000, 64)) + 5
            assert outcome.efficiency.frames_processed <= 1000

    def test_budget_safety_and_uniqueness(self):
        cfg = SearchConfig.for_video(self.video, budget=300, grid_side=4, seed=9)
        scorer = OracleScorer({"needle": [5000]}, locality_sigma=5.0, heuristic_accuracy=0.3, seed=2)
        outcome = run_search(self.video, self.query, scorer, cfg)
        sampled = [i for record in outcome.trace.iterations for i in record.sampled_indices]
        assert len(set(sampled)) == len(sampled)
        assert outcome.efficiency.frames_processed == len(sampled) + outcome.efficiency.verify_calls
        assert outcome.efficiency.frames_processed <= 300

    def test_verify_calls_charged_to_budget(self):
        """测试复核调用计入预算：单格即可耗尽预算时不再复核"""
        cfg = SearchConfig.for_video(self.video, budget=64, grid_side=8, seed=3)
        scorer = OracleScorer({"needle": [5000]}, locality_sigma=60.0, noise_sigma=0.5, seed=3)
        outcome = run_search(self.video, self.query, scorer, cfg)
        assert outcome.efficiency.frames_processed <= 64
        assert outcome.efficiency.verify_calls == 0
        assert outcome.trace.terminal_reason is TerminalReason.BUDGET_EXHAUSTED

    def test_verify_uses_leftover_budget(self):
        """测试抽样后剩余预算只够复核两个候选时恰好复核两次"""
        video = VideoSource("small", 1000, 1.0)
        cfg = SearchConfig.for_video(video, budget=66, grid_side=8, seed=0)
        outcome = run_search(video, self.query, DecoyScorer(), cfg)
        assert outcome.efficiency.verify_calls == 2
        assert outcome.efficiency.frames_processed == 66
        assert outcome.trace.terminal_reason is TerminalReason.BUDGET_EXHAUSTED

    def test_determinism(self):
        """测试同一种子输出完全一致"""
        cfg = SearchConfig.for_video(self.video, seed=42)
        runs = [run_search(self.video, self.query, OracleScorer({"needle": [777]}, 60.0, 0.1, seed=1),
                           cfg, timing=False) for _ in range(2)]
        assert json.dumps(runs[0].to_record("x")) == json.dumps(runs[1].to_record("x"))
        assert [r.sampled_indices for r in runs[0].trace.iterations] == \
               [r.sampled_indices for r in runs[1].trace.iterations]

    def test_scorer_failure_keeps_partial_trace(self):
        cfg = SearchConfig.for_video(self.video, budget=640)
        with pytest.raises(SearchAborted) as excinfo:
            run_search(self.video, self.query, ZeroScorer(fail_after=1), cfg)
        assert len(excinfo.value.trace.iterations) == 1
        assert excinfo.value.efficiency.frames_processed == 64

    def test_config_error_before_loop(self):
        scorer = ZeroScorer()
        cfg = SearchConfig.for_video(self.video, budget=10)
        with pytest.raises(ConfigError):
            run_search(self.video, self.query, scorer, cfg)
        assert scorer.calls == 0

    def test_select_topk_ties(self):
        state = ScoreState(np.array([0.1, 0.9, 0.9, 0.0]), np.ones(4, dtype=np.int8), np.full(4, 0.25))
        assert select_topk(state, 2, 1.0).indices == [1, 2]

    def test_select_topk_padding(self):
        state = ScoreState.fresh(8)
        assert sorted(select_topk(state, 4, 1.0).indices) == [0, 2, 4, 6]

    def test_select_topk_padding_spreads_over_video(self):
        """测试正得分帧集中在片尾时，补齐帧仍铺满整段视频"""
        positives = [900, 910, 920, 930, 940, 950]
        state = apply_scores(ScoreState.fresh(1000), [(frame, 0.8) for frame in positives])
        indices = select_topk(state, 8, 1.0).indices
        assert set(positives) <= set(indices)
        assert sorted(set(indices) - set(positives)) == [0, 500]

    def test_select_topk_single(self):
        state = ScoreState(np.array([0.0, 0.0, 1.0, 0.0]), np.ones(4, dtype=np.int8), np.full(4, 0.25))
        keyframes = select_topk(state, 1, 4.0)
        assert keyframes.indices == [2]
        assert keyframes.timestamps == [0.5]

    def test_select_topk_forced_first(self):
        state = ScoreState(np.array([0.9, 0.8, 0.7, 0.0]), np.ones(4, dtype=np.int8), np.full(4, 0.25))
        assert 2 in select_topk(state, 1, 1.0, forced=[(2, 0.7)]).indices

    def test_trace_export(self, tmp_path):
        """测试分布演化导出"""
        video = VideoSource("small", 256, 1.0)
        cfg = SearchConfig.for_video(video, budget=128)
        outcome = run_search(video, self.query, ZeroScorer(), cfg, record_probabilities=True)
        path = tmp_path / "trace.csv"
        write_trace_csv(outcome.trace, str(path))
        with open(path, encoding="utf-8") as trace_file:
            rows = list(csv.DictReader(trace_file))
        assert len(rows) == (outcome.iterations + 1) * 256
        first = [float(row["prob"]) for row in rows if row["iteration"] == "1"]
        assert sum(first) == pytest.approx(1.0)

    def test_engine_builds_oracle(self):
        engine = TemporalSearchEngine()
        cfg = engine.build_config(self.video, budget=512, seed=3)
        outcome = engine.search(self.video, self.query, cfg, references={"needle": [4000]})
        assert outcome.efficiency.frames_processed <= 512
        assert outcome.efficiency.cost_units == outcome.efficiency.frames_processed


class TestDataSources:
    """数据集与落地来源测试"""

    def write_dataset(self, tmp_path, records):
        path = tmp_path / "dataset.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
        return str(path)

    def test_load_two_records(self, tmp_path):
        path = self.write_dataset(tmp_path, [record(), record(instance_id="inst-2")])
        instances = load_dataset(path)
        assert [i.instance_id for i in instances] == ["inst-1", "inst-2"]
        assert instances[0].query.target_labels == ["cup"]
        assert instances[0].reference_indices == [75]

    def test_default_instance_id(self, tmp_path):
        data = record()
        del data["instance_id"]
        instances = load_dataset(self.write_dataset(tmp_path, [data]))
        assert instances[0].instance_id == "vid-1-000001"

    def test_timestamp_beyond_duration(self, tmp_path):
        path = self.write_dataset(tmp_path, [record(), record(instance_id="x", keyframe_timestamps_s=[11.0])])
        with pytest.raises(ParseError) as excinfo:
            load_dataset(path)
        assert excinfo.value.record == 2

    def test_missing_targets(self, tmp_path):
        data = record()
        del data["targets"]
        with pytest.raises(ParseError) as excinfo:
            load_dataset(self.write_dataset(tmp_path, [data]))
        assert "targets required" in excinfo.value.reason

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text(json.dumps(record()) + "\n{oops\n", encoding="utf-8")
        with pytest.raises(ParseError) as excinfo:
            load_dataset(str(path))
        assert excinfo.value.record == 2

    def test_validate_record(self):
        assert validate_instance_record(record()) == []
        errors = validate_instance_record(record(split="dev", keyframe_frame_indices=[1, 2]))
        assert len(errors) == 2

    def test_grounding_override(self, tmp_path):
        """测试落地文件优先于数据集自带查询"""
        instances = load_dataset(self.write_dataset(tmp_path, [record(), record(instance_id="inst-2")]))
        grounding = tmp_path / "grounding.json"
        grounding.write_text(json.dumps({"inst-2": {"targets": ["mug"], "cues": ["desk"]}}), encoding="utf-8")
        manager = GroundingManager()
        manager.load_custom_grounding(str(grounding))
        assert manager.resolve(instances[0]).target_labels == ["cup"]
        resolved = manager.resolve(instances[1])
        assert resolved.target_labels == ["mug"]
        assert resolved.weight_of("desk") == 0.5
        assert manager.get_available_sources()[-1] == "dataset"

    def test_frame_store(self, tmp_path):
        store = FrameStore(str(tmp_path / "frames"))
        pixels = np.arange(256, dtype=np.uint8).reshape(16, 16)
        path = store.save(42, pixels)
        assert path.endswith("00000042.pgm")
        with open(path, "rb") as frame_file:
            assert frame_file.read(2) == b"P5"
        assert np.array_equal(store.load(42), pixels)

    def test_embeddings_text(self, tmp_path):
        path = tmp_path / "video.txt"
        save_embeddings(np.eye(3), str(path))
        assert np.array_equal(load_embeddings(str(path)), np.eye(3))
        path.write_text("4 3\n1 0 0\n0 1 0\n", encoding="utf-8")
        with pytest.raises(DimensionError):
            load_embeddings(str(path))
