"""
同步化路口車流模擬 主程式

用法:
    python kuramoto_traffic.py validate config.json
    python kuramoto_traffic.py run config.json --strategy both
    python kuramoto_traffic.py compare runs/kuramoto_seed1 runs/baseline_seed1
    python kuramoto_traffic.py oscillators --count 200 --duration 30
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
