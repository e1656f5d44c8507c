#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
参考外部打分器

用法: echo_scorer.py SCORES_TSV
每行读取一个请求，按分数文件原样回复每个单元格的检测结果。
"""

import json
import sys


def load_table(path):
    table = {}
    with open(path, 'r', encoding='utf-8') as scores_file:
        for line in scores_file:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            frame, label, confidence = line.split("\t")
            table.setdefault(int(frame), []).append((label, float(confidence)))
    return table


def main():
    table = load_table(sys.argv[1])
    for line in sys.stdin:
        if not line.strip():
            continue
        request = json.loads(line)
        cells = [
            {"cell": item["cell"],
             "detections": [{"label": label, "confidence": confidence}
                            for label, confidence in table.get(item["frame"], [])]}
            for item in request["cells"]
        ]
        sys.stdout.write(json.dumps({"cells": cells}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
