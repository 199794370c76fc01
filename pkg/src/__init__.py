"""同步化路口車流模擬"""
__version__ = "1.0.0"
