"""
Replay buffer of states that steer sampling toward discovered unsafe regions.
"""

from collections import Counter, deque
from typing import Deque, Hashable, Optional, Tuple

from exceptions import BufferUnderflowError
from models import State


class ReplayBuffer:
    """
    LIFO buffer of states.

    Entries may carry a key; a keyed push is skipped while another entry with
    the same key is buffered. Unkeyed pushes always append.
    """

    def __init__(self) -> None:
        self._entries: Deque[Tuple[State, Optional[Hashable]]] = deque()
        self._keys: Counter = Counter()

    def __len__(self) -> int:
        return len(self._entries)

    def is_empty(self) -> bool:
        return not self._entries

    def push(self, s: State, key: Optional[Hashable] = None) -> bool:
        """
        Append a state.

        Parameters:
            s (State): State to buffer.
            key (Optional[Hashable]): De-duplication key.

        Returns:
            bool: False if the push was skipped because the key is already buffered.
        """
        if key is not None:
            if self._keys[key] > 0:
                return False
            self._keys[key] += 1
        self._entries.append((s, key))
        return True

    def pop(self) -> State:
        """
        Remove and return the most recently pushed state.

        Raises:
            BufferUnderflowError: If the buffer is empty.
        """
        if not self._entries:
            raise BufferUnderflowError("pop from an empty replay buffer")
        s, key = self._entries.pop()
        if key is not None:
            self._keys[key] -= 1
        return s
