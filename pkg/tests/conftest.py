import time

SESSION_START = time.monotonic()
