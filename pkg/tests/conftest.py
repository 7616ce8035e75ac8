# keeps the tests directory importable (oracle.py, checks.py)
