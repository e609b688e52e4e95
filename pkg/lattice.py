#!/usr/bin/env python3
"""
Геометрия решётки L×L с периодическими граничными условиями:
- канонический порядок вершин, звеньев и плакетов
- шахматный знак (-1)^x
- калибровочные преобразования и пути петель Вильсона
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Vertex = Tuple[int, int]


class Direction(IntEnum):
    HORIZONTAL = 0
    VERTICAL = 1


class LinkId(NamedTuple):
    vertex: Vertex
    direction: Direction


@dataclass(frozen=True)
class LatticeGeom:
    """Размер решётки L и порядок калибровочной группы N"""
    L: int
    N: int = 3

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L должно быть положительным, получено {self.L}")
        if self.N < 2:
            raise ValueError(f"N должно быть не меньше 2, получено {self.N}")

    @property
    def n_vertices(self) -> int:
        return self.L * self.L

    @property
    def n_links(self) -> int:
        return 2 * self.L * self.L

    @property
    def n_plaquettes(self) -> int:
        return self.L * self.L

    @property
    def delta(self) -> float:
        return 2.0 * np.pi / self.N

    @property
    def n_configs(self) -> int:
        return self.N ** self.n_links


def wrap(geom: LatticeGeom, x: Vertex) -> Vertex:
    return (x[0] % geom.L, x[1] % geom.L)


def vertex_index(geom: LatticeGeom, x: Vertex) -> int:
    """Порядковый номер вершины, x1 меняется быстрее"""
    x1, x2 = wrap(geom, x)
    return x1 + geom.L * x2


def vertex_coords(geom: LatticeGeom, v: int) -> Vertex:
    return (v % geom.L, v // geom.L)


def shift(geom: LatticeGeom, x: Vertex, direction: Direction, step: int = 1) -> Vertex:
    if direction == Direction.HORIZONTAL:
        return wrap(geom, (x[0] + step, x[1]))
    return wrap(geom, (x[0], x[1] + step))


def link_index(geom: LatticeGeom, link: LinkId) -> int:
    """Порядковый номер звена: горизонтальное звено вершины идёт перед вертикальным"""
    return 2 * vertex_index(geom, link.vertex) + int(link.direction)


def link_from_index(geom: LatticeGeom, index: int) -> LinkId:
    if not 0 <= index < geom.n_links:
        raise IndexError(f"Номер звена {index} вне диапазона [0, {geom.n_links})")
    return LinkId(vertex_coords(geom, index // 2), Direction(index % 2))


def staggering_sign(x: Vertex) -> int:
    return 1 if (x[0] + x[1]) % 2 == 0 else -1


def zero_config(geom: LatticeGeom) -> np.ndarray:
    """Конфигурация |0⟩ на всех звеньях"""
    return np.zeros(geom.n_links, dtype=np.int64)


def random_config(geom: LatticeGeom, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, geom.N, size=geom.n_links, dtype=np.int64)


def plaquette_links(geom: LatticeGeom, p: Vertex) -> List[Tuple[LinkId, int]]:
    """
    Звенья плакета с левым нижним углом p в порядке обхода против часовой стрелки.
    Знак +1 означает обход по ориентации звена (Q), -1 против неё (Q†).
    """
    return [
        (LinkId(wrap(geom, p), Direction.HORIZONTAL), +1),
        (LinkId(shift(geom, p, Direction.HORIZONTAL), Direction.VERTICAL), +1),
        (LinkId(shift(geom, p, Direction.VERTICAL), Direction.HORIZONTAL), -1),
        (LinkId(wrap(geom, p), Direction.VERTICAL), -1),
    ]


def wilson_path(geom: LatticeGeom, origin: Vertex, R1: int, R2: int) -> List[Tuple[LinkId, int]]:
    """Замкнутый прямоугольный путь R1×R2, обход против часовой стрелки от origin"""
    for name, value in (("R1", R1), ("R2", R2)):
        if not 1 <= value <= geom.L:
            raise ValueError(f"{name}={value} вне диапазона [1, {geom.L}]")

    x1, x2 = origin
    path: List[Tuple[LinkId, int]] = []
    for k in range(R1):
        path.append((LinkId(wrap(geom, (x1 + k, x2)), Direction.HORIZONTAL), +1))
    for k in range(R2):
        path.append((LinkId(wrap(geom, (x1 + R1, x2 + k)), Direction.VERTICAL), +1))
    for k in reversed(range(R1)):
        path.append((LinkId(wrap(geom, (x1 + k, x2 + R2)), Direction.HORIZONTAL), -1))
    for k in reversed(range(R2)):
        path.append((LinkId(wrap(geom, (x1, x2 + k)), Direction.VERTICAL), -1))
    return path


def path_arrays(geom: LatticeGeom, path: Sequence[Tuple[LinkId, int]]) -> Tuple[np.ndarray, np.ndarray]:
    """Номера звеньев и знаки пути в виде массивов"""
    indices = np.array([link_index(geom, link) for link, _ in path], dtype=np.int64)
    signs = np.array([sign for _, sign in path], dtype=np.int64)
    return indices, signs


def gauge_transform(geom: LatticeGeom, G: np.ndarray, x: Vertex, times: int = 1) -> np.ndarray:
    """Сдвиг q на звеньях, выходящих из x (+1), и входящих в x (-1), по модулю N"""
    G_new = np.array(G, dtype=np.int64, copy=True)
    for index, step in gauge_moves(geom, x):
        G_new[index] = (G_new[index] + step * times) % geom.N
    return G_new


def gauge_moves(geom: LatticeGeom, x: Vertex) -> List[Tuple[int, int]]:
    x = wrap(geom, x)
    return [
        (link_index(geom, LinkId(x, Direction.HORIZONTAL)), +1),
        (link_index(geom, LinkId(x, Direction.VERTICAL)), +1),
        (link_index(geom, LinkId(shift(geom, x, Direction.HORIZONTAL, -1), Direction.HORIZONTAL)), -1),
        (link_index(geom, LinkId(shift(geom, x, Direction.VERTICAL, -1), Direction.VERTICAL)), -1),
    ]


def maximal_tree(geom: LatticeGeom) -> List[int]:
    """
    Максимальное дерево: горизонтальные звенья каждой строки кроме последнего
    и вертикальные звенья столбца x1=0 кроме последнего. L²-1 звеньев.
    """
    tree = []
    for x2 in range(geom.L):
        for x1 in range(geom.L - 1):
            tree.append(link_index(geom, LinkId((x1, x2), Direction.HORIZONTAL)))
    for x2 in range(geom.L - 1):
        tree.append(link_index(geom, LinkId((0, x2), Direction.VERTICAL)))
    return sorted(tree)


def loop_set(geom: LatticeGeom, max_size: int, rule: str = "le1") -> List[Tuple[int, int]]:
    """Набор петель (R1, R2) с R ≤ max_size; rule='le1' - |R1-R2| ≤ 1, 'eq' - R1 = R2"""
    if rule not in ("le1", "eq"):
        raise ValueError(f"Неизвестное правило отбора петель: {rule}")
    if max_size > geom.L // 2:
        raise ValueError(f"Петли больше L/2 = {geom.L // 2} не допускаются (запрошено {max_size})")
    width = 1 if rule == "le1" else 0
    return [
        (R1, R2)
        for R1 in range(1, max_size + 1)
        for R2 in range(1, max_size + 1)
        if abs(R1 - R2) <= width
    ]
