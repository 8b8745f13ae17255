"""Plugin that sleeps past any reasonable timeout."""
import time

time.sleep(30)
