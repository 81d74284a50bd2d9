import threading
import time

from fmaps.services.parallel import block_slices, ordered_map


def test_block_slices_cover_the_range():
    assert block_slices(10, 4) == [slice(0, 4), slice(4, 8), slice(8, 10)]
    assert block_slices(3, 10) == [slice(0, 3)]
    assert block_slices(0, 4) == []
    assert block_slices(5, 0) == [slice(i, i + 1) for i in range(5)]


def test_ordered_map_keeps_input_order(threads):
    threads(4)

    def slow_square(i):
        time.sleep(0.001 * (10 - i))
        return i * i

    assert list(ordered_map(slow_square, range(10))) == [i * i for i in range(10)]


def test_ordered_map_bounds_tasks_in_flight(threads):
    threads(8)
    lock = threading.Lock()
    active, peak = [0], [0]

    def task(i):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.005)
        with lock:
            active[0] -= 1
        return i

    assert list(ordered_map(task, range(24), max_in_flight=2)) == list(range(24))
    assert 1 <= peak[0] <= 2


def test_ordered_map_serial_fallback(threads):
    threads(1)
    seen = []
    results = ordered_map(lambda i: seen.append(threading.current_thread().name) or i, range(3))
    assert list(results) == [0, 1, 2]
    assert all(not name.startswith("fmaps") for name in seen)
