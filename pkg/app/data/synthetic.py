# app/data/synthetic.py
"""
Dataset contextual sintético. Cada 'pessoa' é um retângulo que não carrega
informação de classe; a classe fica codificada apenas por um glifo plantado
fora da caixa da pessoa, a uma distância limitada. Instâncias Other não têm
glifo. Glifos de outras classes aparecem como distratores com baixo contraste.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from app.models.configs import SyntheticConfig
from app.models.dataset import CueGroundTruth, Dataset, ImageRecord, Instance
from app.models.region import Region
from app.utils.error_handlers import SyntheticDataError

logger = logging.getLogger(__name__)

Box = Tuple[int, int, int, int]

GLYPH_COLORS: Dict[str, Tuple[int, int, int]] = {
    "disk": (230, 40, 40),
    "cross": (40, 200, 60),
    "bar": (50, 90, 240),
    "ring": (240, 210, 30),
    "square": (230, 60, 220),
    "triangle": (40, 220, 220),
}

# Cores das pessoas: sorteadas independentemente da classe
PERSON_PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (70, 90, 140), (140, 90, 70), (90, 130, 90), (120, 110, 150),
)


@dataclass
class SyntheticSplit:
    train: Dataset
    test: Dataset
    cues: CueGroundTruth


def draw_glyph(draw: ImageDraw.ImageDraw, box: Box, glyph: str, color) -> None:
    """Desenha um glifo ocupando a caixa [x1, x2) x [y1, y2)."""
    x1, y1, x2, y2 = box
    size = x2 - x1
    last_x, last_y = x2 - 1, y2 - 1
    third = max(1, size // 3)
    mid_lo = x1 + (size - third) // 2
    if glyph == "disk":
        draw.ellipse([x1, y1, last_x, last_y], fill=color)
    elif glyph == "cross":
        draw.rectangle([mid_lo, y1, mid_lo + third - 1, last_y], fill=color)
        row = y1 + (size - third) // 2
        draw.rectangle([x1, row, last_x, row + third - 1], fill=color)
    elif glyph == "bar":
        draw.rectangle([mid_lo, y1, mid_lo + third - 1, last_y], fill=color)
    elif glyph == "ring":
        draw.ellipse([x1, y1, last_x, last_y], outline=color, width=max(2, size // 5))
    elif glyph == "square":
        draw.rectangle([x1, y1, last_x, last_y], fill=color)
    elif glyph == "triangle":
        half = size / 2.0
        draw.regular_polygon((x1 + half, y1 + half, half), 3, fill=color)
    else:
        raise SyntheticDataError(f"glifo desconhecido: '{glyph}'")


def glyph_mask(glyph: str, size: int) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    draw_glyph(ImageDraw.Draw(canvas), (0, 0, size, size), glyph, 255)
    return np.asarray(canvas) > 0


def decode_cue(pixels: np.ndarray, box: Region, cfg: SyntheticConfig) -> Optional[int]:
    """
    Índice da classe cujo glifo (forma e cor) ocupa exatamente a caixa, ou None.
    pixels: uint8 [3,H,W]. Só é exato sem ruído e sem distratores.
    """
    x1, y1, x2, y2 = (int(v) for v in box.coords)
    crop = pixels[:, y1:y2, x1:x2]
    size = x2 - x1
    matches = []
    for index, glyph in enumerate(cfg.glyphs[:cfg.cue_classes]):
        color = np.asarray(GLYPH_COLORS[glyph], dtype=np.uint8)[:, None, None]
        painted = np.all(crop == color, axis=0)
        if np.array_equal(painted, glyph_mask(glyph, size)):
            matches.append(index)
    return matches[0] if len(matches) == 1 else None


def _overlaps(a: Box, b: Box) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1])


class _ImagePainter:
    """Posiciona pessoas, glifos e distratores de uma imagem por amostragem com rejeição."""

    def __init__(self, cfg: SyntheticConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def _free(self, box: Box, occupied: Sequence[Box]) -> bool:
        x1, y1, x2, y2 = box
        if x1 < 0 or y1 < 0 or x2 > self.cfg.width or y2 > self.cfg.height:
            return False
        return not any(_overlaps(box, other) for other in occupied)

    def _person(self, occupied: Sequence[Box]) -> Optional[Box]:
        cfg, rng = self.cfg, self.rng
        w = int(rng.integers(cfg.person_width[0], cfg.person_width[1] + 1))
        h = int(rng.integers(cfg.person_height[0], cfg.person_height[1] + 1))
        if w > cfg.width or h > cfg.height:
            return None
        x = int(rng.integers(0, cfg.width - w + 1))
        y = int(rng.integers(0, cfg.height - h + 1))
        box = (x, y, x + w, y + h)
        return box if self._free(box, occupied) else None

    def _cue_near(self, person: Box, occupied: Sequence[Box]) -> Optional[Box]:
        """Caixa do glifo fora da pessoa, com folga entre cue_distance[0] e cue_distance[1] pixels."""
        cfg, rng = self.cfg, self.rng
        s = cfg.cue_size
        gap = int(rng.integers(cfg.cue_distance[0], cfg.cue_distance[1] + 1))
        px1, py1, px2, py2 = person
        side = int(rng.integers(4))
        if side in (0, 1):
            x = px1 - gap - s if side == 0 else px2 + gap
            y = int(rng.integers(py1 - s + 1, py2))
        else:
            y = py1 - gap - s if side == 2 else py2 + gap
            x = int(rng.integers(px1 - s + 1, px2))
        box = (x, y, x + s, y + s)
        return box if self._free(box, occupied) else None

    def _anywhere(self, occupied: Sequence[Box]) -> Optional[Box]:
        s = self.cfg.cue_size
        x = int(self.rng.integers(0, self.cfg.width - s + 1))
        y = int(self.rng.integers(0, self.cfg.height - s + 1))
        box = (x, y, x + s, y + s)
        return box if self._free(box, occupied) else None

    def _try(self, fn, occupied: List[Box]) -> Optional[Box]:
        for _ in range(self.cfg.max_placement_attempts):
            box = fn(occupied)
            if box is not None:
                occupied.append(box)
                return box
        return None

    def layout(self, count: int, cue_glyphs: Sequence[str], distractor_glyphs: Sequence[str]):
        """
        Uma tentativa de layout completa. Retorna (pessoas, glifos por pessoa,
        distratores) ou None se algum item não coube.
        """
        occupied: List[Box] = []
        persons: List[Box] = []
        for _ in range(count):
            box = self._try(self._person, occupied)
            if box is None:
                return None
            persons.append(box)

        cues: List[List[Tuple[Box, str]]] = []
        for person in persons:
            placed = []
            for glyph in cue_glyphs:
                box = self._try(lambda occ: self._cue_near(person, occ), occupied)
                if box is None:
                    return None
                placed.append((box, glyph))
            cues.append(placed)

        distractors: List[Tuple[Box, str]] = []
        for glyph in distractor_glyphs:
            box = self._try(self._anywhere, occupied)
            if box is None:
                return None
            distractors.append((box, glyph))
        return persons, cues, distractors

    def render(self, persons, cues, distractors) -> bytes:
        cfg, rng = self.cfg, self.rng
        level = int(rng.integers(80, 161))
        background = (level, level, level)
        image = Image.new("RGB", (cfg.width, cfg.height), background)
        draw = ImageDraw.Draw(image)
        for box in persons:
            color = PERSON_PALETTE[int(rng.integers(len(PERSON_PALETTE)))]
            draw.rectangle([box[0], box[1], box[2] - 1, box[3] - 1], fill=color)
        for placed in cues:
            for box, glyph in placed:
                draw_glyph(draw, box, glyph, GLYPH_COLORS[glyph])
        for box, glyph in distractors:
            faded = tuple(
                int(round(b + cfg.distractor_contrast * (c - b))) for c, b in zip(GLYPH_COLORS[glyph], background)
            )
            draw_glyph(draw, box, glyph, faded)

        planes = np.asarray(image, dtype=np.uint8).transpose(2, 0, 1)
        if cfg.noise_amplitude > 0:
            noisy = planes / 255.0 + rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude, size=planes.shape)
            planes = np.round(np.clip(noisy, 0.0, 1.0) * 255.0).astype(np.uint8)
        return np.ascontiguousarray(planes).tobytes()


def _attribute_vectors(num_attributes: int) -> List[Tuple[int, ...]]:
    """Vetores binários não nulos em ordem crescente (rodízio do modo multilabel)."""
    return [tuple((code >> bit) & 1 for bit in range(num_attributes)) for code in range(1, 2 ** num_attributes)]


def _generate_split(cfg: SyntheticConfig, split: str, total: int, split_id: int,
                    cue_regions: Dict[str, Tuple[Region, ...]]) -> Dataset:
    rng = np.random.default_rng([cfg.seed, split_id])
    painter = _ImagePainter(cfg, rng)
    glyphs = cfg.glyphs[:cfg.cue_classes]
    num_classes = cfg.num_classes
    other_index = num_classes - 1 if cfg.include_other else None

    # cotas exatas por classe: o balanceamento vale por construção
    quotas = [total // num_classes + (1 if c < total % num_classes else 0) for c in range(num_classes)]
    vectors = _attribute_vectors(num_classes) if cfg.multilabel else []
    remaining_total = total
    images: List[ImageRecord] = []

    index = 0
    while remaining_total > 0:
        count = int(rng.integers(cfg.instances_min, cfg.instances_max + 1))
        if cfg.multilabel:
            attributes = vectors[index % len(vectors)]
            label = None
            cue_glyphs = [g for g, flag in zip(glyphs, attributes) if flag]
            distractor_pool = [g for g, flag in zip(glyphs, attributes) if not flag]
        else:
            open_classes = [c for c in range(num_classes) if quotas[c] > 0]
            label = open_classes[index % len(open_classes)]
            count = min(count, quotas[label])
            quotas[label] -= count
            attributes = None
            cue_glyphs = [] if label == other_index else [glyphs[label]]
            distractor_pool = [g for c, g in enumerate(glyphs) if c != label]
        count = min(count, remaining_total)
        remaining_total -= count

        distractors = [distractor_pool[int(rng.integers(len(distractor_pool)))]
                       for _ in range(cfg.distractor_count)] if distractor_pool else []

        layout = None
        for _ in range(cfg.max_placement_attempts):
            layout = painter.layout(count, cue_glyphs, distractors)
            if layout is not None:
                break
        if layout is None:
            raise SyntheticDataError(
                f"posicionamento inviável para {count} pessoas com {len(cue_glyphs)} glifo(s) cada em "
                f"{cfg.width}x{cfg.height} após {cfg.max_placement_attempts} tentativas"
            )
        persons, cues, distractor_boxes = layout

        image_id = f"{split}-{index:05d}"
        instances = []
        for j, (box, placed) in enumerate(zip(persons, cues)):
            instance_id = f"{image_id}-p{j}"
            instances.append(Instance(
                instance_id=instance_id,
                region=Region(x1=box[0], y1=box[1], x2=box[2], y2=box[3], source="ground-truth"),
                label=label,
                attributes=attributes,
            ))
            cue_regions[instance_id] = tuple(
                Region(x1=b[0], y1=b[1], x2=b[2], y2=b[3], source="ground-truth") for b, _ in placed
            )
        images.append(ImageRecord(
            image_id=image_id,
            frame_id=image_id,
            width=cfg.width,
            height=cfg.height,
            pixels=painter.render(persons, cues, distractor_boxes),
            instances=tuple(instances),
        ))
        index += 1

    return Dataset(class_names=cfg.class_names, loss_kind="multilabel" if cfg.multilabel else "softmax",
                   images=tuple(images))


def _check_balance(dataset: Dataset, cfg: SyntheticConfig) -> None:
    counts = dataset.class_counts()
    uniform = dataset.num_instances / len(dataset.class_names)
    names = dataset.class_names[:cfg.cue_classes]
    for name in names:
        if abs(counts[name] - uniform) > 0.2 * uniform + 1:
            raise SyntheticDataError(f"classe '{name}' desbalanceada: {counts[name]} (uniforme {uniform:.1f})")


def _self_check(dataset: Dataset, cues: CueGroundTruth, cfg: SyntheticConfig) -> None:
    """Sem ruído e sem distratores, o glifo decodificado deve ser exatamente a classe."""
    for image, inst in dataset.iter_instances():
        pixels = image.as_uint8()
        for region in cues.for_instance(inst.instance_id):
            decoded = decode_cue(pixels, region, cfg)
            if inst.label is not None and decoded != inst.label:
                raise SyntheticDataError(
                    f"glifo de '{inst.instance_id}' decodificado como {decoded}, rótulo {inst.label}"
                )
            if inst.attributes is not None and (decoded is None or inst.attributes[decoded] != 1):
                raise SyntheticDataError(f"glifo de '{inst.instance_id}' não corresponde aos atributos")


def synth_generate(cfg: SyntheticConfig) -> SyntheticSplit:
    """Gera os conjuntos de treino e teste e as regiões dos glifos plantados; determinístico por semente."""
    cue_regions: Dict[str, Tuple[Region, ...]] = {}
    train = _generate_split(cfg, "train", cfg.train_instances, 0, cue_regions)
    test = _generate_split(cfg, "test", cfg.test_instances, 1, cue_regions)
    cues = CueGroundTruth(cues=cue_regions)
    if not cfg.multilabel:
        _check_balance(train, cfg)
        _check_balance(test, cfg)
    if cfg.noise_amplitude == 0 and cfg.distractor_count == 0:
        _self_check(train, cues, cfg)
        _self_check(test, cues, cfg)
    logger.info(
        f"Dataset sintético gerado (semente {cfg.seed}): treino {len(train.images)} imagens / "
        f"{train.num_instances} instâncias, teste {len(test.images)} / {test.num_instances}."
    )
    return SyntheticSplit(train=train, test=test, cues=cues)


def split_by_frame(dataset: Dataset, fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Divide o dataset mantendo todas as instâncias de um frame no mesmo lado.
    fraction é a fração aproximada de instâncias do primeiro conjunto.
    """
    if not (0.0 < fraction < 1.0):
        raise SyntheticDataError(f"fração de divisão deve estar em (0, 1): {fraction}")
    frames: Dict[str, List[ImageRecord]] = {}
    for image in dataset.images:
        frames.setdefault(image.frame_id, []).append(image)
    order = list(frames)
    np.random.default_rng(seed).shuffle(order)

    target = fraction * dataset.num_instances
    first: List[ImageRecord] = []
    second: List[ImageRecord] = []
    taken = 0
    for frame_id in order:
        members = frames[frame_id]
        size = sum(len(m.instances) for m in members)
        if taken < target:
            first.extend(members)
            taken += size
        else:
            second.extend(members)
    if not first or not second:
        raise SyntheticDataError(f"divisão por frame com fração {fraction} deixou um dos lados vazio")
    return (
        Dataset(class_names=dataset.class_names, loss_kind=dataset.loss_kind, images=tuple(first)),
        Dataset(class_names=dataset.class_names, loss_kind=dataset.loss_kind, images=tuple(second)),
    )
