#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
关键帧检索API服务器
提供REST API接口：单个/批量检索、指标评估、数据集记录校验与配置管理
"""

import os
import secrets
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from flask import Flask, jsonify, request
from flask_cors import CORS

from . import __version__
from .core import ConfigError, ParseError, SearchConfig, TStarError, derive_seed, load_config_from_file, validate_config
from .data_sources import parse_instance_record, validate_instance_record
from .metrics import SimilaritySpec, evaluate_instance
from .scoring import ScorerSpec
from .search_engine import TemporalSearchEngine

SEARCH_FIELDS = set(SearchConfig.__dataclass_fields__)


class SearchAPI:
    """检索系统API类"""

    def __init__(self, config: Optional[Dict] = None):
        self.app = Flask(__name__)
        # 设置安全的SECRET_KEY
        self.app.config['SECRET_KEY'] = os.environ.get('SECRET_KEY') or secrets.token_hex(32)

        # 配置CORS
        cors_config = {
            'origins': ['http://localhost:5000'],
            'methods': ['GET', 'POST', 'PUT'],
            'allow_headers': ['Content-Type'],
            'supports_credentials': True,
            'max_age': 600
        }
        CORS(self.app, **cors_config)

        self.engine = TemporalSearchEngine(config)

        self._setup_routes()
        self._setup_security_headers()

    def _setup_security_headers(self):
        """设置安全响应头"""
        @self.app.after_request
        def add_security_headers(response):
            response.headers['X-Content-Type-Options'] = 'nosniff'
            response.headers['X-Frame-Options'] = 'SAMEORIGIN'
            response.headers['Strict-Transport-Security'] = 'max-age=31536000; includeSubDomains'
            response.headers['Content-Security-Policy'] = "default-src 'self'"
            return response

    def _setup_routes(self):
        """设置API路由"""
        self._setup_health_routes()
        self._setup_search_routes()
        self._setup_evaluation_routes()
        self._setup_config_routes()
        self._setup_error_handlers()

    def _setup_health_routes(self):
        """设置健康检查路由"""
        @self.app.route('/api/health', methods=['GET'])
        def health_check():
            """健康检查接口"""
            return jsonify({
                "status": "ok",
                "message": "关键帧检索API运行正常",
                "version": __version__
            })

    def _setup_search_routes(self):
        """设置检索相关路由"""
        @self.app.route('/api/search', methods=['POST'])
        def search():
            """检索接口"""
            request_data = request.get_json(silent=True)
            if not request_data or 'instance' not in request_data:
                return self._error("缺少必需参数: instance", 400)
            result, status = self._search_one(request_data)
            return jsonify(result), status

        @self.app.route('/api/batch-search', methods=['POST'])
        def batch_search():
            """批量检索接口"""
            request_data = request.get_json(silent=True)
            if not request_data or 'requests' not in request_data:
                return self._error("缺少requests参数", 400)
            results = []
            for single_request in request_data['requests']:
                if not isinstance(single_request, dict) or 'instance' not in single_request:
                    results.append({"success": False, "error": "请求缺少必需参数: instance"})
                    continue
                results.append(self._search_one(single_request)[0])
            return jsonify({"success": True, "results": results})

    def _search_one(self, request_data: Dict[str, Any]):
        """执行一次检索，返回 (响应体, 状态码)"""
        try:
            if not isinstance(request_data['instance'], dict):
                raise ParseError(1, "记录应为 JSON 对象")
            instance = parse_instance_record(request_data['instance'], 1)
            overrides = request_data.get('config') or {}
            unknown = set(overrides) - SEARCH_FIELDS
            if unknown:
                raise ConfigError("unknown_field", f"未知配置项: {sorted(unknown)}")
            seed = int(request_data.get('seed', self.engine.config.get("search", {}).get("seed", 0)))
            overrides = dict(overrides, seed=derive_seed(seed, instance.instance_id))
            cfg = validate_config(self.engine.build_config(instance.video, **overrides), instance.video)
            try:
                spec = self._scorer_spec(request_data.get('scorer'))
            except (TStarError, TypeError, ValueError) as e:
                raise ConfigError("scorer", f"打分器描述无效: {e}") from e
            outcome = self.engine.search(instance.video, instance.query, cfg, spec,
                                         instance.oracle_references())
        except ParseError as e:
            return {"success": False, "error": str(e)}, 400
        except ConfigError as e:
            return {"success": False, "error": str(e), "constraint": e.constraint}, 400
        except TStarError as e:
            return {"success": False, "error": str(e)}, 500
        return {"success": True, "data": outcome.to_record(instance.instance_id)}, 200

    def _scorer_spec(self, scorer: Any) -> Optional[ScorerSpec]:
        """打分器可以是描述字符串或 {kind, cost_units_per_frame, params}"""
        if scorer is None:
            return None
        if isinstance(scorer, str):
            return ScorerSpec.parse(scorer)
        return ScorerSpec(scorer.get('kind', 'oracle'), float(scorer.get('cost_units_per_frame', 1.0)),
                          dict(scorer.get('params', {})))

    def _setup_evaluation_routes(self):
        """设置评估与校验路由"""
        @self.app.route('/api/evaluate', methods=['POST'])
        def evaluate():
            """时间指标评估接口"""
            request_data = request.get_json(silent=True)
            if not request_data:
                return self._error("请求数据为空", 400)
            for field in ('predicted', 'reference'):
                if field not in request_data:
                    return self._error(f"缺少必需参数: {field}", 400)
            if request_data.get('metric', 'temporal') != 'temporal':
                return self._error("仅支持 temporal 指标；视觉与嵌入指标请使用命令行", 400)
            try:
                spec = SimilaritySpec(temporal_threshold_s=float(request_data.get('threshold', 5.0)))
                reports = evaluate_instance(
                    [(float(t), None) for t in request_data['predicted']],
                    [(float(t), None) for t in request_data['reference']],
                    [spec],
                )
            except (TStarError, TypeError, ValueError) as e:
                return self._error(str(e), 400)
            return jsonify({"success": True, "data": reports[0].to_dict()})

        @self.app.route('/api/validate', methods=['POST'])
        def validate_data():
            """验证实例记录格式"""
            request_data = request.get_json(silent=True)
            if not request_data or 'instances' not in request_data:
                return self._error("缺少instances参数", 400)
            validation_errors = []
            for i, record in enumerate(request_data['instances']):
                if not isinstance(record, dict):
                    validation_errors.append(f"实例 {i}: 记录应为 JSON 对象")
                    continue
                validation_errors.extend(f"实例 {i}: {error}" for error in validate_instance_record(record))
            return jsonify({
                "success": True,
                "valid": len(validation_errors) == 0,
                "errors": validation_errors
            })

    def _setup_config_routes(self):
        """设置配置相关路由"""
        @self.app.route('/api/config', methods=['GET'])
        def get_config():
            """获取检索引擎配置"""
            return jsonify({"success": True, "data": self.engine.config})

        @self.app.route('/api/config', methods=['PUT'])
        def update_config():
            """更新检索引擎配置"""
            request_data = request.get_json(silent=True) or {}
            search_section = request_data.get('search', {})
            unknown = set(search_section) - SEARCH_FIELDS
            if unknown:
                return self._error(f"未知配置项: {sorted(unknown)}", 400)
            self.engine.config.setdefault('search', {}).update(search_section)
            if 'scorer' in request_data:
                self.engine.config.setdefault('scorer', {}).update(request_data['scorer'])
            return jsonify({"success": True, "message": "配置更新成功", "data": self.engine.config})

    def _setup_error_handlers(self):
        """设置错误处理器"""
        @self.app.errorhandler(404)
        def not_found(error):
            """404错误处理"""
            return self._error("API接口不存在", 404)

        @self.app.errorhandler(500)
        def internal_error(error):
            """500错误处理"""
            return self._error("服务器内部错误", 500)

    @staticmethod
    def _error(message: str, status: int):
        return jsonify({"success": False, "error": message}), status

    def run(self, host='127.0.0.1', port=5000, debug=False):
        """运行API服务器"""
        ssl_context = None
        if os.environ.get('FLASK_ENV') == 'production':
            # 生产环境使用SSL
            ssl_context = 'adhoc'
            debug = False

        self.app.run(host=host, port=port, debug=debug, ssl_context=ssl_context)


def main():
    """从 config.json 的 api_settings 段启动服务器"""
    load_dotenv()
    config = load_config_from_file(os.environ.get('TSTAR_CONFIG', 'config.json'))
    settings = config.get('api_settings', {})
    engine_config = {key: config[key] for key in ('search', 'scorer') if key in config} or None
    api = SearchAPI(engine_config)
    api.run(host=settings.get('host', '127.0.0.1'), port=int(settings.get('port', 5000)),
            debug=bool(settings.get('debug', False)))


if __name__ == "__main__":
    main()
