# app/tests/test_synthetic.py

import numpy as np
import pytest

from app.data import GLYPH_COLORS, decode_cue, glyph_mask, split_by_frame, synth_generate
from app.geometry import iou
from app.models.configs import GLYPHS, SyntheticConfig
from app.utils.error_handlers import SyntheticDataError


def test_geracao_deterministica(tiny_synth_config, tiny_split):
    """Mesma semente, mesmos pixels e anotações."""
    again = synth_generate(tiny_synth_config)
    assert again.train == tiny_split.train
    assert again.test == tiny_split.test
    assert [img.pixels for img in again.train.images] == [img.pixels for img in tiny_split.train.images]
    assert again.cues == tiny_split.cues


def test_semente_diferente_muda_imagens(tiny_synth_config, tiny_split):
    """Outra semente gera outro dataset."""
    other = synth_generate(tiny_synth_config.model_copy(update={"seed": 1}))
    assert [img.pixels for img in other.train.images] != [img.pixels for img in tiny_split.train.images]


def test_contagens_e_classes(tiny_synth_config, tiny_split):
    """Número de instâncias pedido, classes com glifo mais Other e balanceamento exato."""
    assert tiny_split.train.num_instances == 12
    assert tiny_split.test.num_instances == 6
    assert tiny_split.train.class_names == ("disk", "cross", "other")
    assert tiny_split.train.class_counts() == {"disk": 4, "cross": 4, "other": 4}
    assert tiny_split.test.class_counts() == {"disk": 2, "cross": 2, "other": 2}


def test_glifos_fora_da_pessoa_e_sem_sobreposicao(tiny_synth_config, tiny_split):
    """O glifo não toca nenhuma pessoa da própria imagem, fica a uma distância limitada, e só Other não tem glifo."""
    low, high = tiny_synth_config.cue_distance
    other = tiny_split.train.class_names.index("other")
    for dataset in (tiny_split.train, tiny_split.test):
        for image, inst in dataset.iter_instances():
            cues = tiny_split.cues.for_instance(inst.instance_id)
            if inst.label == other:
                assert cues == ()
                continue
            assert len(cues) == 1
            cue, person = cues[0], inst.region
            assert iou(cue, person) == 0.0
            gap_x = max(cue.x1 - person.x2, person.x1 - cue.x2)
            gap_y = max(cue.y1 - person.y2, person.y1 - cue.y2)
            assert low <= max(gap_x, gap_y) <= high
            for neighbour in image.instances:
                assert iou(cue, neighbour.region) == 0.0


def test_glifo_decodifica_para_o_rotulo(tiny_synth_config, tiny_split):
    """Sem ruído e sem distratores, a forma e a cor no glifo decodificam exatamente a classe."""
    for image, inst in tiny_split.train.iter_instances():
        for cue in tiny_split.cues.for_instance(inst.instance_id):
            assert decode_cue(image.as_uint8(), cue, tiny_synth_config) == inst.label


def test_pessoas_nao_carregam_classe(tiny_synth_config, tiny_split):
    """Nenhuma cor de glifo aparece dentro da caixa da pessoa."""
    colors = [np.asarray(GLYPH_COLORS[g], dtype=np.uint8)[:, None, None] for g in tiny_synth_config.glyphs]
    for image, inst in tiny_split.train.iter_instances():
        x1, y1, x2, y2 = (int(v) for v in inst.region.coords)
        crop = image.as_uint8()[:, y1:y2, x1:x2]
        assert not any(np.all(crop == color, axis=0).any() for color in colors)


def test_mascaras_dos_glifos_sao_distintas():
    """Cada glifo tem uma forma diferente e não vazia."""
    masks = [glyph_mask(g, 12) for g in GLYPHS]
    assert all(m.any() for m in masks)
    assert len({m.tobytes() for m in masks}) == len(GLYPHS)


def test_variante_multilabel():
    """No modo de atributos cada instância tem um glifo por atributo positivo."""
    cfg = SyntheticConfig(width=64, height=64, num_classes=2, include_other=False, multilabel=True,
                          instances_max=1, noise_amplitude=0.0, distractor_count=0,
                          train_instances=6, test_instances=3)
    split = synth_generate(cfg)
    assert split.train.loss_kind == "multilabel"
    assert split.train.class_names == ("has_disk", "has_cross")
    for _, inst in split.train.iter_instances():
        assert any(inst.attributes)
        assert len(split.cues.for_instance(inst.instance_id)) == sum(inst.attributes)


def test_configuracao_inviavel_e_erro():
    """Imagem pequena demais para pessoa e glifo levanta SyntheticDataError."""
    cfg = SyntheticConfig(width=16, height=16, num_classes=2, max_placement_attempts=5,
                          train_instances=2, test_instances=2)
    with pytest.raises(SyntheticDataError):
        synth_generate(cfg)


def test_split_by_frame_mantem_frames_juntos(tiny_split):
    """Cada frame fica inteiro em um dos lados e nenhuma imagem se perde."""
    first, second = split_by_frame(tiny_split.train, 0.5, seed=3)
    ids_first = {img.frame_id for img in first.images}
    ids_second = {img.frame_id for img in second.images}
    assert not ids_first & ids_second
    assert first.num_instances + second.num_instances == tiny_split.train.num_instances
    assert first.num_instances >= 6
    assert split_by_frame(tiny_split.train, 0.5, seed=3)[0] == first


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.5])
def test_split_by_frame_fracao_invalida(tiny_split, fraction):
    """Frações fora de (0, 1) são rejeitadas."""
    with pytest.raises(SyntheticDataError):
        split_by_frame(tiny_split.train, fraction)
