"""预算约束下的长视频关键帧检索"""

__version__ = "1.0.0"
