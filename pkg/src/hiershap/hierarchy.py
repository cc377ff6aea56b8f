"""Binary partition hierarchies over images.

Two builders produce the same compact tree layout:

- :func:`build_bpt`: data-aware bottom-up merging of 4-adjacent regions,
  cheapest pair first, distance = squared-color-range * area * sqrt(perimeter).
- :func:`build_aa`: data-agnostic recursive halving of rectangles along
  their longest axis.

A tree over n pixels has 2n-1 nodes: leaves 0..n-1 (one per pixel) and
internal nodes n..2n-2 in creation order, root last. Topology and region
extents live in six integer arrays (leaf_idx, left, right, start, end,
pixels); an internal node's pixel set is the slice
``pixels[start[k-n]:end[k-n]]``.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import StructuralError
from .oracle import CoalitionStructure

KIND_BPT = "bpt"
KIND_AA = "aa"
KIND_CUSTOM = "custom"
_KIND_BYTES = {KIND_BPT: 0, KIND_AA: 1, KIND_CUSTOM: 2}
_KIND_NAMES = {v: k for k, v in _KIND_BYTES.items()}

VARIANT_DEFAULT = "default"
VARIANT_NO_PERIMETER = "no-perimeter"
VARIANT_NO_COLOR = "no-color"
DISTANCE_VARIANTS = (VARIANT_DEFAULT, VARIANT_NO_PERIMETER, VARIANT_NO_COLOR)

MAX_PIXELS = 1 << 24

TREE_MAGIC = b"BPT1"


@dataclass(frozen=True)
class RasterImage:
    """8-bit image, shape (height, width, channels) with 1 or 3 channels.

    Pixel index is row-major: pixel p sits at row p // width, column
    p % width.
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.dtype != np.uint8 or d.shape[2] not in (1, 3):
            raise ValueError("image must be uint8 with shape (h, w, 1|3)")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if d.shape[0] * d.shape[1] > MAX_PIXELS:
            raise ValueError(f"image exceeds the {MAX_PIXELS}-pixel limit")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def num_pixels(self) -> int:
        return self.height * self.width

    def rgb(self) -> np.ndarray:
        """Per-pixel colors as (n, 3) int32; grayscale repeats the channel."""
        d = self.data
        if d.shape[2] == 1:
            d = np.repeat(d, 3, axis=2)
        return d.reshape(-1, 3).astype(np.int32)

    @staticmethod
    def from_array(arr) -> "RasterImage":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return RasterImage(arr)

    @staticmethod
    def load(path) -> "RasterImage":
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.uint8)[:, :, None]
            elif img.mode == "RGB":
                arr = np.asarray(img, dtype=np.uint8)
            else:
                raise ValueError(f"unsupported image mode {img.mode!r}, need 8-bit RGB or gray")
        return RasterImage(arr)

    def save(self, path) -> None:
        if self.channels == 1:
            Image.fromarray(self.data[:, :, 0], mode="L").save(path, format="PNG")
        else:
            Image.fromarray(self.data, mode="RGB").save(path, format="PNG")


@dataclass
class RegionStats:
    """Running statistics of one region during bottom-up merging.

    Perimeter is counted in 4-connectivity edge units (a lone pixel has
    perimeter 4); ``root`` is the region's current representative node id.
    """

    min_rgb: np.ndarray
    max_rgb: np.ndarray
    area: int
    perimeter: int
    root: int = -1

    @staticmethod
    def for_pixel(color, node: int) -> "RegionStats":
        color = np.asarray(color, dtype=np.int64)
        return RegionStats(color.copy(), color.copy(), 1, 4, node)


def _distance_formula(clr2: float, area: float, perimeter: float, variant: str) -> float:
    if variant == VARIANT_DEFAULT:
        return clr2 * area * math.sqrt(perimeter)
    if variant == VARIANT_NO_PERIMETER:
        return clr2 * area
    if variant == VARIANT_NO_COLOR:
        return area * math.sqrt(perimeter)
    raise ValueError(f"unknown distance variant {variant!r}")


def region_distance(
    a: RegionStats, b: RegionStats, shared_boundary: int, variant: str = VARIANT_DEFAULT
) -> float:
    """Merge cost of two adjacent regions.

    The color term is the squared range of the merged region per channel,
    summed over channels; area and perimeter are those of the merged
    region (shared boundary edges stop being perimeter on both sides).
    """
    if shared_boundary < 1:
        raise ValueError("regions are not adjacent (no shared boundary)")
    ranges = np.maximum(a.max_rgb, b.max_rgb) - np.minimum(a.min_rgb, b.min_rgb)
    clr2 = float(np.sum(ranges.astype(np.int64) ** 2))
    area = a.area + b.area
    perimeter = a.perimeter + b.perimeter - 2 * shared_boundary
    return _distance_formula(clr2, area, perimeter, variant)


@dataclass
class PartitionTree:
    """Binary partition tree in the six-array layout (see module docstring)."""

    n: int
    leaf_idx: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    end: np.ndarray
    pixels: np.ndarray
    kind: str
    width: int | None = None
    height: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return 2 * self.n - 1

    @property
    def root(self) -> int:
        return 2 * self.n - 2

    def is_leaf(self, node: int) -> bool:
        return node < self.n

    def children(self, node: int) -> tuple[int, int]:
        if node < self.n:
            raise StructuralError(f"node {node} is a leaf")
        k = node - self.n
        return int(self.left[k]), int(self.right[k])

    def region_size(self, node: int) -> int:
        if node < self.n:
            return 1
        k = node - self.n
        return int(self.end[k] - self.start[k])

    def region_pixel_array(self, node: int) -> np.ndarray:
        if node < 0 or node >= self.num_nodes:
            raise IndexError(f"node id {node} out of range [0, {self.num_nodes})")
        if node < self.n:
            return self.leaf_idx[node : node + 1]
        k = node - self.n
        return self.pixels[self.start[k] : self.end[k]]

    def node_masks(self) -> list[int]:
        """Per-node pixel bitsets, computed bottom-up."""
        masks = [0] * self.num_nodes
        for node in range(self.n):
            masks[node] = 1 << int(self.leaf_idx[node])
        for k in range(self.n - 1):
            masks[self.n + k] = masks[int(self.left[k])] | masks[int(self.right[k])]
        return masks


def region_pixels(tree: PartitionTree, node: int) -> set[int]:
    """Pixel indices covered by a node; a singleton for leaves."""
    return set(int(p) for p in tree.region_pixel_array(node))


def tree_from_merges(
    merges: list[tuple[int, int]],
    n: int,
    kind: str = KIND_CUSTOM,
    width: int | None = None,
    height: int | None = None,
    leaf_pixels: np.ndarray | None = None,
) -> PartitionTree:
    """Assemble the array layout from a bottom-up merge list.

    ``merges[t] = (a, b)`` creates internal node ``n + t`` with children a
    and b; children must already exist. Leaf node i covers pixel
    ``leaf_pixels[i]`` (identity when omitted).
    """
    if n < 1:
        raise StructuralError("tree needs at least one leaf")
    if len(merges) != n - 1:
        raise StructuralError(f"expected {n - 1} merges, got {len(merges)}")
    if leaf_pixels is None:
        leaf_pixels = np.arange(n, dtype=np.int64)
    else:
        leaf_pixels = np.asarray(leaf_pixels, dtype=np.int64)
    left = np.array([a for a, _ in merges], dtype=np.int64)
    right = np.array([b for _, b in merges], dtype=np.int64)
    start = np.zeros(n - 1, dtype=np.int64)
    end = np.zeros(n - 1, dtype=np.int64)
    pixels = np.zeros(n, dtype=np.int64)

    # Depth-first placement: each node's pixels form one contiguous run.
    cursor = 0
    root = 2 * n - 2 if n > 1 else 0
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if node < n:
            pixels[cursor] = leaf_pixels[node]
            cursor += 1
            continue
        k = node - n
        if done:
            end[k] = cursor
        else:
            start[k] = cursor
            stack.append((node, True))
            stack.append((int(right[k]), False))
            stack.append((int(left[k]), False))
    if cursor != n:
        raise StructuralError("merge list does not connect all leaves")
    return PartitionTree(
        n=n,
        leaf_idx=leaf_pixels,
        left=left,
        right=right,
        start=start,
        end=end,
        pixels=pixels,
        kind=kind,
        width=width,
        height=height,
    )


def _pixel_adjacencies(width: int, height: int):
    """Row-major index pairs of 4-adjacent pixels (right and down)."""
    idx = np.arange(width * height).reshape(height, width)
    pairs = []
    if width > 1:
        pairs.append(np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1))
    if height > 1:
        pairs.append(np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(pairs, axis=0)


def build_bpt(
    image: RasterImage,
    variant: str = VARIANT_DEFAULT,
    literal_perimeter: bool = False,
    return_stats: bool = False,
):
    """Merge 4-adjacent regions cheapest-first into a full binary hierarchy.

    Equal distances break ties by the smaller node id of the pair, then the
    larger, so rebuilding the same image always yields the same tree. Stale
    heap entries are skipped on pop: an entry only fires while both its
    endpoints are still unmerged.

    ``literal_perimeter`` reproduces a published pseudo-code quirk where the
    merged region's stored perimeter skips the shared-boundary subtraction;
    the default keeps the geometrically true perimeter.
    """
    n = image.num_pixels
    colors = image.rgb()
    total_nodes = 2 * n - 1

    mins: list[tuple[int, int, int]] = [tuple(c) for c in colors.tolist()]
    maxs = list(mins)
    area = [1] * n
    perimeter = [4] * n
    root_of = list(range(total_nodes))
    mins.extend([(0, 0, 0)] * (n - 1))
    maxs.extend([(0, 0, 0)] * (n - 1))
    area.extend([0] * (n - 1))
    perimeter.extend([0] * (n - 1))

    def dist(a: int, b: int, shared: int) -> float:
        la, lb, ha, hb = mins[a], mins[b], maxs[a], maxs[b]
        r0 = (ha[0] if ha[0] > hb[0] else hb[0]) - (la[0] if la[0] < lb[0] else lb[0])
        r1 = (ha[1] if ha[1] > hb[1] else hb[1]) - (la[1] if la[1] < lb[1] else lb[1])
        r2 = (ha[2] if ha[2] > hb[2] else hb[2]) - (la[2] if la[2] < lb[2] else lb[2])
        clr2 = r0 * r0 + r1 * r1 + r2 * r2
        merged_area = area[a] + area[b]
        merged_per = perimeter[a] + perimeter[b] - 2 * shared
        return _distance_formula(clr2, merged_area, merged_per, variant)

    pairs = _pixel_adjacencies(image.width, image.height)
    adj: list[dict[int, int] | None] = [dict() for _ in range(n)] + [None] * (n - 1)
    for a, b in pairs.tolist():
        adj[a][b] = 1
        adj[b][a] = 1

    # Pixel-pair distances vectorized: area 2, perimeter 4 + 4 - 2.
    if len(pairs):
        unit = _distance_formula(1.0, 2.0, 6.0, variant)
        if variant == VARIANT_NO_COLOR:
            dists = np.full(len(pairs), unit)
        else:
            diff = (colors[pairs[:, 0]] - colors[pairs[:, 1]]).astype(np.int64)
            dists = np.sum(diff * diff, axis=1).astype(np.float64) * unit
        heap = [(d, a, b) for d, (a, b) in zip(dists.tolist(), pairs.tolist())]
    else:
        heap = []
    heapq.heapify(heap)

    merges: list[tuple[int, int]] = []
    next_node = n
    while next_node < total_nodes:
        _, a, b = heapq.heappop(heap)
        if root_of[a] != a or root_of[b] != b:
            continue
        shared = adj[a][b]
        k = next_node
        next_node += 1
        la, lb, ha, hb = mins[a], mins[b], maxs[a], maxs[b]
        mins[k] = (min(la[0], lb[0]), min(la[1], lb[1]), min(la[2], lb[2]))
        maxs[k] = (max(ha[0], hb[0]), max(ha[1], hb[1]), max(ha[2], hb[2]))
        area[k] = area[a] + area[b]
        if literal_perimeter:
            perimeter[k] = perimeter[a] + perimeter[b]
        else:
            perimeter[k] = perimeter[a] + perimeter[b] - 2 * shared
        root_of[a] = root_of[b] = k
        merges.append((a, b))

        neighbors: dict[int, int] = {}
        for src in (a, b):
            for x, s in adj[src].items():  # type: ignore[union-attr]
                if x == a or x == b:
                    continue
                neighbors[x] = neighbors.get(x, 0) + s
        adj[a] = adj[b] = None
        adj[k] = neighbors
        for x, s in neighbors.items():
            other = adj[x]
            other.pop(a, None)
            other.pop(b, None)
            other[k] = s
            lo, hi = (k, x) if k < x else (x, k)
            heapq.heappush(heap, (dist(k, x, s), lo, hi))

    tree = tree_from_merges(merges, n, KIND_BPT, image.width, image.height)
    tree.meta["distance_variant"] = variant
    if literal_perimeter:
        tree.meta["literal_perimeter"] = True
    if not return_stats:
        return tree
    stats = {
        "min_rgb": np.array(mins, dtype=np.int64),
        "max_rgb": np.array(maxs, dtype=np.int64),
        "area": np.array(area, dtype=np.int64),
        "perimeter": np.array(perimeter, dtype=np.int64),
        "root_of": np.array(root_of, dtype=np.int64),
    }
    return tree, stats


def build_aa(width: int, height: int) -> PartitionTree:
    """Recursively halve rectangles along their longest axis, down to pixels.

    Square regions split horizontally (into top and bottom halves); odd
    lengths give the first part the extra pixel.
    """
    if width < 1 or height < 1:
        raise ValueError("width and height must be positive")
    n = width * height
    merges: list[tuple[int, int]] = []

    def split(x0: int, y0: int, w: int, h: int) -> int:
        if w == 1 and h == 1:
            return y0 * width + x0
        if h >= w:
            top = (h + 1) // 2
            first = split(x0, y0, w, top)
            second = split(x0, y0 + top, w, h - top)
        else:
            leftw = (w + 1) // 2
            first = split(x0, y0, leftw, h)
            second = split(x0 + leftw, y0, w - leftw, h)
        merges.append((first, second))
        return n + len(merges) - 1

    split(0, 0, width, height)
    tree = tree_from_merges(merges, n, KIND_AA, width, height)
    tree.meta["tie_rule"] = "square-splits-horizontal"
    return tree


def to_structure(tree: PartitionTree) -> CoalitionStructure:
    """Mirror the tree as a coalition structure with singleton leaves."""
    nodes: list[CoalitionStructure | None] = [None] * tree.num_nodes
    for i in range(tree.n):
        nodes[i] = CoalitionStructure.block([int(tree.leaf_idx[i])])
    for k in range(tree.n - 1):
        nodes[tree.n + k] = CoalitionStructure.compose(
            [nodes[int(tree.left[k])], nodes[int(tree.right[k])]]
        )
    return nodes[tree.root]


def recount_perimeter(pixel_set: set[int], width: int, height: int) -> int:
    """Boundary length of a pixel set in 4-connectivity edge units."""
    per = 0
    for p in pixel_set:
        y, x = divmod(p, width)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height):
                per += 1
            elif ny * width + nx not in pixel_set:
                per += 1
    return per


def _regions_adjacent(a: set[int], b: set[int], width: int, height: int) -> bool:
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    for p in small:
        y, x = divmod(p, width)
        if x + 1 < width and p + 1 in big:
            return True
        if x > 0 and p - 1 in big:
            return True
        if y + 1 < height and p + width in big:
            return True
        if y > 0 and p - width in big:
            return True
    return False


def tree_validate(tree: PartitionTree, image: RasterImage | None = None) -> list[str]:
    """Check the structural invariants; returns violation descriptions."""
    violations: list[str] = []
    n = tree.n
    if len(tree.leaf_idx) != n:
        violations.append(f"leaf_idx has {len(tree.leaf_idx)} entries, expected {n}")
    for name, arr in (("left", tree.left), ("right", tree.right), ("start", tree.start), ("end", tree.end)):
        if len(arr) != n - 1:
            violations.append(f"{name} has {len(arr)} entries, expected {n - 1}")
    if len(tree.pixels) != n:
        violations.append(f"pixels has {len(tree.pixels)} entries, expected {n}")
    if violations:
        return violations

    if sorted(int(p) for p in tree.leaf_idx) != list(range(n)):
        violations.append("leaf coverage: leaf_idx is not a permutation of the pixels")
    if sorted(int(p) for p in tree.pixels) != list(range(n)):
        violations.append("leaf coverage: pixels is not a permutation of the pixels")

    seen_as_child = set()
    for k in range(n - 1):
        node = n + k
        for child in (int(tree.left[k]), int(tree.right[k])):
            if not (0 <= child < node):
                violations.append(f"node {node}: child {child} out of order")
            elif child in seen_as_child:
                violations.append(f"node {node}: child {child} has two parents")
            else:
                seen_as_child.add(child)
    if n > 1 and len(seen_as_child) != 2 * n - 2:
        violations.append("tree is not connected: some nodes lack a parent")

    sets: list[set[int]] = [set() for _ in range(tree.num_nodes)]
    for i in range(n):
        sets[i] = {int(tree.leaf_idx[i])}
    for k in range(n - 1):
        a, b = int(tree.left[k]), int(tree.right[k])
        if sets[a] & sets[b]:
            violations.append(f"node {n + k}: children overlap")
        sets[n + k] = sets[a] | sets[b]
        interval = set(int(p) for p in tree.pixels[tree.start[k] : tree.end[k]])
        if interval != sets[n + k]:
            violations.append(f"node {n + k}: pixel interval does not match the children union")

    if n > 1 and sets[tree.root] != set(range(n)):
        violations.append("root does not cover all pixels")

    if tree.kind == KIND_BPT and image is not None:
        w, h = image.width, image.height
        if w * h != n:
            violations.append(f"image has {w * h} pixels, tree has {n}")
        else:
            for k in range(n - 1):
                a, b = int(tree.left[k]), int(tree.right[k])
                if not _regions_adjacent(sets[a], sets[b], w, h):
                    violations.append(f"adjacency: children of node {n + k} do not touch")
    return violations


def save_tree(tree: PartitionTree, path) -> None:
    """Binary layout: magic, kind byte, u32 n, six little-endian u32 arrays."""
    with open(path, "wb") as fh:
        fh.write(TREE_MAGIC)
        fh.write(struct.pack("<BI", _KIND_BYTES[tree.kind], tree.n))
        for arr in (tree.leaf_idx, tree.left, tree.right, tree.start, tree.end, tree.pixels):
            fh.write(np.asarray(arr, dtype="<u4").tobytes())


def load_tree(path) -> PartitionTree:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TREE_MAGIC:
        raise StructuralError(f"{path}: not a partition tree file")
    kind_byte, n = struct.unpack_from("<BI", data, 4)
    if kind_byte not in _KIND_NAMES:
        raise StructuralError(f"{path}: unknown kind byte {kind_byte}")
    if n < 1:
        raise StructuralError(f"{path}: invalid leaf count {n}")
    sizes = [n, n - 1, n - 1, n - 1, n - 1, n]
    expected = 9 + 4 * sum(sizes)
    if len(data) != expected:
        raise StructuralError(f"{path}: file is {len(data)} bytes, expected {expected}")
    offset = 9
    arrays = []
    for count in sizes:
        arr = np.frombuffer(data, dtype="<u4", count=count, offset=offset).astype(np.int64)
        arrays.append(arr)
        offset += 4 * count
    leaf_idx, left, right, start, end, pixels = arrays
    return PartitionTree(
        n=int(n),
        leaf_idx=leaf_idx,
        left=left,
        right=right,
        start=start,
        end=end,
        pixels=pixels,
        kind=_KIND_NAMES[kind_byte],
    )
