"""Reference models used only by tests, written independently of memsys.

Deliberately naive: straight-line lookups over Python lists, no shared code
with the cache under test, so the two can disagree when one of them is wrong.
"""


class SetAssocLruRef:
    """Set-associative LRU over line numbers, modulo-indexed."""

    def __init__(self, num_lines, assoc):
        self.assoc = assoc
        self.num_sets = num_lines // assoc
        self.contents = {s: [] for s in range(self.num_sets)}  # LRU first

    def access(self, line):
        """Access with allocate-on-miss; returns True on hit."""
        s = self.contents[line % self.num_sets]
        if line in s:
            s.remove(line)
            s.append(line)
            return True
        if len(s) == self.assoc:
            s.pop(0)
        s.append(line)
        return False

    def probe(self, line):
        return line in self.contents[line % self.num_sets]


class FullyAssocLruRef:
    """Fully associative LRU with a fixed capacity."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.order = []

    def access(self, line):
        if line in self.order:
            self.order.remove(line)
            self.order.append(line)
            return True
        if len(self.order) == self.capacity:
            self.order.pop(0)
        self.order.append(line)
        return False
