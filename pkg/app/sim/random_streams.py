import zlib
from typing import List

import numpy as np

_MASK_32 = 0xFFFFFFFF


def _seed_words(seed: int) -> List[int]:
    """Раскладывает 64-битный seed на 32-битные слова для SeedSequence"""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return [seed & _MASK_32, (seed >> 32) & _MASK_32]


def stage_seed(seed: int, tag: str, *indices: int) -> np.random.SeedSequence:
    """Подпоток, однозначно определяемый seed запуска, тегом этапа и индексами"""
    tag_word = zlib.crc32(tag.encode("utf-8")) & _MASK_32
    entropy = _seed_words(seed) + [tag_word] + [int(i) & _MASK_32 for i in indices]
    return np.random.SeedSequence(entropy)


def stage_rng(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Генератор для этапа: одинаковые (seed, tag, indices) дают одинаковую случайность"""
    return np.random.default_rng(stage_seed(seed, tag, *indices))


def derive_seed(seed: int, tag: str, *indices: int) -> int:
    """Производный 64-битный seed для вложенных запусков"""
    return int(stage_seed(seed, tag, *indices).generate_state(1, dtype=np.uint64)[0])
