# app/tests/test_repositories.py

import csv
import hashlib
import json

import pytest

from app.models.manifest import RunManifest
from app.models.report import ClassResult, EvalReport, GradcheckResult, InstancePrediction
from app.models.region import Region
from app.network import init_params
from app.repositories import (DatasetRepository, load_checkpoint, load_dataset, save_checkpoint, save_dataset,
                              write_eval_report, write_gradcheck_csv, write_loss_csv, write_manifest)
from app.repositories.checkpoint_repository import MAGIC, PREAMBLE
from app.utils.error_handlers import (CheckpointChecksumError, CheckpointError, CheckpointShapeError,
                                      CheckpointTruncatedError, CheckpointVersionError, DatasetChecksumError,
                                      DatasetMissingFileError, DatasetTruncatedError, DatasetVersionError,
                                      ShapeError)


@pytest.fixture
def saved_dataset(tmp_path, tiny_split):
    root = tmp_path / "train"
    repo = DatasetRepository(root)
    repo.save(tiny_split.train)
    repo.save_cues(tiny_split.cues)
    return repo


@pytest.fixture
def checkpoint_path(tmp_path, tiny_model_config, tiny_train_config):
    params = init_params(tiny_model_config, seed=4)
    return save_checkpoint(tmp_path / "model.rstar", params, tiny_model_config, tiny_train_config, iteration=3)


def _flip_byte(path, position):
    data = bytearray(path.read_bytes())
    data[position] ^= 0xFF
    path.write_bytes(bytes(data))


# ----------------------------------------------------------------- dataset

def test_dataset_ida_e_volta(saved_dataset, tiny_split):
    """Gravar e ler devolve o mesmo dataset, pixels inclusive, e a verdade de glifos."""
    loaded = saved_dataset.load()
    assert loaded == tiny_split.train
    assert [img.pixels for img in loaded.images] == [img.pixels for img in tiny_split.train.images]
    assert saved_dataset.load_cues() == tiny_split.cues


def test_dataset_sem_glifos(tmp_path, tiny_split):
    """Sem cues.json o carregamento de glifos devolve None."""
    save_dataset(tmp_path / "d", tiny_split.test)
    assert DatasetRepository(tmp_path / "d").load_cues() is None
    assert load_dataset(tmp_path / "d") == tiny_split.test


def test_dataset_arquivo_ausente(tmp_path):
    """Diretório sem dataset.json: erro citando o caminho."""
    with pytest.raises(DatasetMissingFileError) as excinfo:
        load_dataset(tmp_path / "nada")
    assert "dataset.json" in str(excinfo.value)


def test_dataset_imagens_corrompidas(saved_dataset):
    """Um byte alterado em images.bin é detectado pelo checksum."""
    _flip_byte(saved_dataset.images_path, 20)
    with pytest.raises(DatasetChecksumError):
        saved_dataset.load()


def test_dataset_imagens_truncadas(saved_dataset, tiny_split):
    """images.bin curto demais: o erro nomeia a imagem incompleta."""
    data = saved_dataset.images_path.read_bytes()
    saved_dataset.images_path.write_bytes(data[:-1])
    with pytest.raises(DatasetTruncatedError) as excinfo:
        saved_dataset.load()
    assert tiny_split.train.images[-1].image_id in str(excinfo.value)


def test_dataset_anotacoes_alteradas(saved_dataset):
    """Editar o json sem atualizar o checksum é detectado."""
    document = json.loads(saved_dataset.annotations_path.read_text(encoding="utf-8"))
    document["class_names"][0] = "outro"
    saved_dataset.annotations_path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(DatasetChecksumError):
        saved_dataset.load()


def test_dataset_versao_desconhecida(saved_dataset):
    """Versão de container diferente é rejeitada antes de qualquer leitura de imagem."""
    document = json.loads(saved_dataset.annotations_path.read_text(encoding="utf-8"))
    document["version"] = 99
    saved_dataset.annotations_path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(DatasetVersionError):
        saved_dataset.load()


def test_dataset_json_truncado(saved_dataset):
    """JSON cortado no meio é tratado como container truncado."""
    text = saved_dataset.annotations_path.read_text(encoding="utf-8")
    saved_dataset.annotations_path.write_text(text[: len(text) // 2], encoding="utf-8")
    with pytest.raises(DatasetTruncatedError):
        saved_dataset.load()


# -------------------------------------------------------------- checkpoint

def test_checkpoint_ida_e_volta(checkpoint_path, tiny_model_config, tiny_train_config):
    """Parâmetros bit a bit idênticos, configurações e iteração preservadas."""
    checkpoint = load_checkpoint(checkpoint_path)
    assert checkpoint.params.equals(init_params(tiny_model_config, seed=4))
    assert checkpoint.model_config == tiny_model_config
    assert checkpoint.train_config == tiny_train_config
    assert checkpoint.iteration == 3
    assert all(t.requires_grad for _, t in checkpoint.params)


def test_checkpoint_ausente(tmp_path):
    """Arquivo inexistente é CheckpointError."""
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nao_existe.rstar")


def test_checkpoint_byte_corrompido(checkpoint_path):
    """Um byte alterado nos tensores falha no checksum."""
    size = checkpoint_path.stat().st_size
    _flip_byte(checkpoint_path, size - 3)
    with pytest.raises(CheckpointChecksumError):
        load_checkpoint(checkpoint_path)


def test_checkpoint_cabecalho_corrompido(checkpoint_path):
    """Um byte alterado no cabeçalho falha no checksum do cabeçalho."""
    _flip_byte(checkpoint_path, len(MAGIC) + PREAMBLE.size + 5)
    with pytest.raises(CheckpointChecksumError):
        load_checkpoint(checkpoint_path)


def test_checkpoint_truncado_nomeia_tensor(checkpoint_path):
    """Cortar o final do arquivo: o erro cita o tensor incompleto."""
    data = checkpoint_path.read_bytes()
    checkpoint_path.write_bytes(data[:-8])
    with pytest.raises(CheckpointTruncatedError) as excinfo:
        load_checkpoint(checkpoint_path)
    assert "head_secondary.bias" in str(excinfo.value)


def test_checkpoint_versao_e_magic(checkpoint_path):
    """Versão desconhecida ou magic inválido levantam CheckpointVersionError."""
    data = bytearray(checkpoint_path.read_bytes())
    data[len(MAGIC)] = 2
    checkpoint_path.write_bytes(bytes(data))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(checkpoint_path)
    checkpoint_path.write_bytes(b"NOTACKPT" + bytes(data[8:]))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(checkpoint_path)


def test_checkpoint_formas_incompativeis(tmp_path, tiny_model_config, checkpoint_path):
    """Parâmetros que não batem com o ModelConfig não são gravados nem carregados."""
    params = init_params(tiny_model_config)
    other = tiny_model_config.model_copy(update={"fc_widths": (5, 8)})
    with pytest.raises(ShapeError):
        save_checkpoint(tmp_path / "x.rstar", params, other)

    # cabeçalho íntegro (checksum recalculado) mas com fc6 mais estreita que os tensores gravados
    data = checkpoint_path.read_bytes()
    start = len(MAGIC)
    version, header_len, _ = PREAMBLE.unpack_from(data, start)
    header_start = start + PREAMBLE.size
    header = json.loads(data[header_start:header_start + header_len])
    header["model_config"]["fc_widths"] = [5, 8]
    new_header = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = (MAGIC + PREAMBLE.pack(version, len(new_header), hashlib.sha256(new_header).digest())
            + new_header + data[header_start + header_len:])
    checkpoint_path.write_bytes(blob)
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(checkpoint_path)


# ----------------------------------------------------------------- relatórios

@pytest.fixture
def eval_report():
    selected = Region(x1=1.5, y1=2, x2=10, y2=12)
    return EvalReport(
        mode="rstar",
        class_names=("a", "b"),
        classes=[ClassResult(class_name="a", positives=1, ap=1.0), ClassResult(class_name="b")],
        mean_ap=1.0,
        instances=[InstancePrediction(instance_id="i0", image_id="img", frame_id="img", target=(1, 0),
                                      probabilities=(0.75, 0.25), selected=((selected,), (selected,)))],
    )


def test_write_eval_report(tmp_path, eval_report):
    """report.txt com mAP e classes indefinidas; seleções com coordenadas em repr."""
    written = write_eval_report(tmp_path, eval_report)
    assert {p.name for p in written} == {"report.txt", "pr_curves.csv", "predictions.csv", "selections.csv",
                                         "top_predictions.csv"}
    text = (tmp_path / "report.txt").read_text(encoding="utf-8")
    assert "mean_ap: 1.0" in text
    assert "ap[b]: undefined (positives 0)" in text

    with (tmp_path / "selections.csv").open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 2
    assert rows[0]["selected"] == "1.5 2.0 10.0 12.0"
    assert rows[0]["probability"] == "0.75"

    with (tmp_path / "predictions.csv").open(encoding="utf-8") as handle:
        header = next(csv.reader(handle))
    assert header == ["instance_id", "a", "b", "target"]


def test_write_loss_e_gradcheck_csv(tmp_path):
    """Uma linha por iteração e por (operador, semente)."""
    write_loss_csv(tmp_path / "loss.csv", [0.5, 0.25])
    assert (tmp_path / "loss.csv").read_text(encoding="utf-8").splitlines() == ["iteration,loss", "1,0.5", "2,0.25"]
    results = [GradcheckResult(operator="relu", seed=0, max_rel_error=1e-9, tolerance=1e-4, passed=True)]
    lines = write_gradcheck_csv(tmp_path / "g.csv", results).read_text(encoding="utf-8").splitlines()
    assert lines[1].startswith("relu,0,1e-09,0.0001,1,0,")


def test_write_manifest(tmp_path):
    """O manifesto é json legível de volta pelo próprio modelo."""
    manifest = RunManifest(command="synth", version="v0", seed=1, resolved_config={"x": 1}).finish()
    path = write_manifest(tmp_path, manifest)
    loaded = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    assert loaded.resolved_config == {"x": 1}
    assert loaded.finished_at is not None
