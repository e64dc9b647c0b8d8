# app/cli/commands.py
"""
Comandos da CLI: synth, train, eval, gradcheck, compare e proposals.
Códigos de saída: 0 sucesso, 1 falha de execução, 2 erro de uso.
"""
import logging
import subprocess
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import typer
from rich.console import Console
from rich.table import Table

from app.autodiff import DEFAULT_SEEDS, run_gradcheck, standard_cases
from app.config.loader import build_config, read_overrides
from app.config.settings import PROJECT_ROOT
from app.data import synth_generate
from app.models.configs import (EvalConfig, ModelConfig, ProposalConfig, SyntheticConfig, TrainConfig,
                                synthetic_train_config)
from app.models.dataset import Dataset
from app.models.manifest import RunManifest
from app.models.region import OverlapBounds, ProposalSet
from app.network import gradcheck_cases
from app.proposals import generate
from app.repositories import (DatasetRepository, load_checkpoint, load_proposals, save_checkpoint,
                              save_proposals, write_comparison_csv, write_eval_report, write_gradcheck_csv,
                              write_loss_csv, write_manifest)
from app.services import EvaluationService, TrainingService, compare_variants, default_variants, model_config_for
from app.utils.error_handlers import EvaluationError, handle_command_error

logger = logging.getLogger(__name__)
console = Console()

app = typer.Typer(
    name="rstar",
    help="Classificação de ações com regiões secundárias latentes, em escala de desktop.",
    no_args_is_help=True,
    add_completion=False,
)

CHECKPOINT_FILE = "checkpoint.rstar"
LOSS_FILE = "loss.csv"
COMPARE_FILE = "compare.csv"


class ModeChoice(str, Enum):
    rstar = "rstar"
    rcnn = "rcnn"
    random = "random"
    scene = "scene"


class LossChoice(str, Enum):
    softmax = "softmax"
    multilabel = "multilabel"


class PresetChoice(str, Enum):
    default = "default"
    synthetic = "synthetic"


def _version() -> str:
    """Versão no estilo git describe; 'unknown' fora de um repositório git."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=PROJECT_ROOT, capture_output=True, text=True, timeout=5, check=True,
        )
        return result.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _overrides(path: Optional[Path]) -> Dict[str, Any]:
    try:
        return read_overrides(path)
    except (OSError, ValueError) as e:
        raise typer.BadParameter(str(e), param_hint="--config")


def _section(overrides: Dict[str, Any], name: str) -> Dict[str, Any]:
    """Seção do arquivo de configuração (train, model, proposals, eval, synth)."""
    value = overrides.get(name) or {}
    if not isinstance(value, dict):
        raise typer.BadParameter(f"seção '{name}' deve ser um mapeamento", param_hint="--config")
    return value


def _dataset_repo(path: Path) -> DatasetRepository:
    return DatasetRepository(path)


def _external_proposals(path: Optional[Path], *datasets: Dataset) -> Optional[Dict[str, ProposalSet]]:
    if path is None:
        return None
    extents = {image.image_id: image.extent for dataset in datasets for image in dataset.images}
    return load_proposals(path, extents)


def _finish(out: Path, manifest: RunManifest, outputs: List[Path]) -> None:
    manifest = manifest.model_copy(update={"outputs": [str(p.relative_to(out)) for p in outputs]})
    write_manifest(out, manifest.finish())


@app.command()
def synth(
    out: Path = typer.Option(..., "--out", help="Diretório de saída (recebe train/ e test/)."),
    seed: int = typer.Option(0, "--seed"),
    classes: int = typer.Option(5, "--classes", min=2, help="Número de classes, incluindo Other."),
    train_instances: Optional[int] = typer.Option(None, "--train-instances"),
    test_instances: Optional[int] = typer.Option(None, "--test-instances"),
    noise: Optional[float] = typer.Option(None, "--noise", help="Amplitude do ruído uniforme."),
    distractors: Optional[int] = typer.Option(None, "--distractors"),
    multilabel: bool = typer.Option(False, "--multilabel", help="Variante de atributos (sem classe Other)."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML/JSON com a seção 'synth'."),
):
    """Gera o dataset sintético de pistas contextuais."""
    try:
        flags = {
            "seed": seed,
            "num_classes": classes,
            "train_instances": train_instances,
            "test_instances": test_instances,
            "noise_amplitude": noise,
            "distractor_count": distractors,
        }
        if multilabel:
            flags.update(multilabel=True, include_other=False)
        cfg = build_config(SyntheticConfig, file_overrides=_section(_overrides(config), "synth"),
                           flag_overrides=flags)
        manifest = RunManifest(command="synth", version=_version(), seed=cfg.seed,
                               resolved_config={"synth": cfg.model_dump(mode="json")})

        split = synth_generate(cfg)
        outputs: List[Path] = []
        for name, dataset in (("train", split.train), ("test", split.test)):
            repo = _dataset_repo(out / name)
            outputs.extend(repo.save(dataset))
            outputs.append(repo.save_cues(split.cues))
        _finish(out, manifest, outputs)
        typer.echo(f"treino: {split.train.num_instances} instâncias, teste: {split.test.num_instances} instâncias")
    except (typer.Exit, click.ClickException):
        raise
    except Exception as e:
        raise handle_command_error(e, "synth")


@app.command()
def train(
    data: Path = typer.Option(..., "--data", help="Diretório do dataset de treino."),
    out: Path = typer.Option(..., "--out", help="Diretório de saída."),
    mode: Optional[ModeChoice] = typer.Option(None, "--mode"),
    lower: Optional[float] = typer.Option(None, "--l", help="Limite inferior de overlap."),
    upper: Optional[float] = typer.Option(None, "--u", help="Limite superior de overlap."),
    n_secondary: Optional[int] = typer.Option(None, "--ns", help="n_S: secundárias gulosas."),
    n_candidates: Optional[int] = typer.Option(None, "--n", help="N: candidatas amostradas por primária."),
    lr: Optional[float] = typer.Option(None, "--lr"),
    iters: Optional[int] = typer.Option(None, "--iters"),
    batch_primaries: Optional[int] = typer.Option(None, "--batch-primaries"),
    images_per_batch: Optional[int] = typer.Option(None, "--images-per-batch"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    loss: Optional[LossChoice] = typer.Option(None, "--loss"),
    momentum: Optional[float] = typer.Option(None, "--momentum"),
    checkpoint_interval: Optional[int] = typer.Option(None, "--checkpoint-interval"),
    preset: PresetChoice = typer.Option(PresetChoice.default, "--preset",
                                        help="default: defaults do TrainConfig; synthetic: receita de desktop."),
    proposals: Optional[Path] = typer.Option(None, "--proposals", help="Arquivo de propostas externo."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML/JSON com seções train/model/proposals."),
):
    """Treina um modelo e grava checkpoint, curva de perda e manifesto."""
    try:
        overrides = _overrides(config)
        base = synthetic_train_config() if preset == PresetChoice.synthetic else TrainConfig()
        cfg = build_config(TrainConfig, base=base, file_overrides=_section(overrides, "train"), flag_overrides={
            "mode": mode.value if mode else None,
            "n_secondary": n_secondary,
            "n_candidates": n_candidates,
            "learning_rate": lr,
            "iterations": iters,
            "batch_primaries": batch_primaries,
            "images_per_batch": images_per_batch,
            "seed": seed,
            "loss_kind": loss.value if loss else None,
            "momentum": momentum,
            "checkpoint_interval": checkpoint_interval,
        })
        ignored = [flag for flag, value in (("--l", lower), ("--u", upper), ("--n", n_candidates),
                                             ("--ns", n_secondary)) if value is not None]
        if cfg.mode == "rcnn" and ignored:
            logger.warning(f"Modo rcnn não usa regiões secundárias; flags ignoradas: {', '.join(ignored)}")
            typer.echo(f"aviso: modo rcnn ignora {', '.join(ignored)}", err=True)
            cfg = cfg.model_copy(update={"bounds": base.bounds, "n_candidates": base.n_candidates,
                                         "n_secondary": base.n_secondary})
        elif lower is not None or upper is not None:
            cfg = cfg.model_copy(update={"bounds": OverlapBounds(
                l=lower if lower is not None else cfg.bounds.l,
                u=upper if upper is not None else cfg.bounds.u,
            )})

        dataset = _dataset_repo(data).load()
        model_section = _section(overrides, "model")
        base_model = ModelConfig.model_validate({"class_names": dataset.class_names, **model_section}) \
            if model_section else None
        model_cfg = model_config_for(dataset, cfg, base_model)
        proposal_cfg = build_config(ProposalConfig, file_overrides=_section(overrides, "proposals"))
        manifest = RunManifest(command="train", version=_version(), seed=cfg.seed, resolved_config={
            "train": cfg.model_dump(mode="json"),
            "model": model_cfg.model_dump(mode="json"),
            "proposals": proposal_cfg.model_dump(mode="json"),
            "data": str(data),
        })

        outputs: List[Path] = []

        def on_checkpoint(step: int, params) -> None:
            name = CHECKPOINT_FILE if step == cfg.iterations else f"checkpoint-{step:06d}.rstar"
            outputs.append(save_checkpoint(out / name, params, model_cfg, cfg, iteration=step))

        service = TrainingService(dataset, cfg, model_cfg, proposal_cfg, _external_proposals(proposals, dataset))
        result = service.train(on_checkpoint=on_checkpoint)
        outputs.append(write_loss_csv(out / LOSS_FILE, result.losses))
        _finish(out, manifest, outputs)
        final = f"{result.losses[-1]:.4f}" if result.losses else "n/a"
        typer.echo(f"treino concluído: {cfg.iterations} passos, perda final {final}")
    except (typer.Exit, click.ClickException):
        raise
    except Exception as e:
        raise handle_command_error(e, "train")


@app.command("eval")
def evaluate(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    data: Path = typer.Option(..., "--data", help="Diretório do dataset de teste."),
    out: Path = typer.Option(..., "--out"),
    frame_level: bool = typer.Option(False, "--frame-level", help="AP por frame (máximo sobre instâncias)."),
    cue_overlap: bool = typer.Option(False, "--cue-overlap", help="IoU entre secundárias escolhidas e glifos."),
    interpolated: bool = typer.Option(False, "--interpolated", help="AP interpolado em 11 pontos."),
    top_k: Optional[int] = typer.Option(None, "--top-k"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    proposals: Optional[Path] = typer.Option(None, "--proposals"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML/JSON com seções eval/proposals."),
):
    """Avalia um checkpoint: AP por classe, mAP, curvas PR e seleções."""
    try:
        overrides = _overrides(config)
        eval_overrides = dict(_section(overrides, "eval"))
        if _section(overrides, "proposals"):
            eval_overrides["proposals"] = _section(overrides, "proposals")
        eval_cfg = build_config(EvalConfig, file_overrides=eval_overrides, flag_overrides={
            "frame_level": frame_level or None,
            "interpolated": interpolated or None,
            "top_k": top_k,
            "seed": seed,
        })
        loaded = load_checkpoint(checkpoint)
        repo = _dataset_repo(data)
        dataset = repo.load()
        cues = None
        if cue_overlap:
            cues = repo.load_cues()
            if cues is None:
                raise EvaluationError(f"--cue-overlap exige {repo.cues_path}")
        manifest = RunManifest(command="eval", version=_version(), seed=eval_cfg.seed, resolved_config={
            "eval": eval_cfg.model_dump(mode="json"),
            "model": loaded.model_config.model_dump(mode="json"),
            "checkpoint": str(checkpoint),
            "data": str(data),
        })

        service = EvaluationService(loaded.model_config, eval_cfg, _external_proposals(proposals, dataset))
        report = service.evaluate(dataset, loaded.params, cues)
        outputs = write_eval_report(out, report)
        _finish(out, manifest, outputs)

        table = Table(title=f"AP por classe ({report.level}, {report.ap_variant})")
        table.add_column("classe")
        table.add_column("positivos", justify="right")
        table.add_column("AP", justify="right")
        for result in report.classes:
            table.add_row(result.class_name, str(result.positives),
                          f"{result.ap:.4f}" if result.ap is not None else "indefinido")
        table.add_row("mAP", "", f"{report.mean_ap:.4f}")
        console.print(table)
        if report.cue_overlap is not None and report.cue_overlap.fraction is not None:
            console.print(f"secundária sobre o glifo (IoU >= {report.cue_overlap.threshold}): "
                          f"{report.cue_overlap.fraction:.1%}")
    except (typer.Exit, click.ClickException):
        raise
    except Exception as e:
        raise handle_command_error(e, "eval")


@app.command()
def gradcheck(
    seeds: Optional[List[int]] = typer.Option(None, "--seed", help="Sementes (repetível); padrão 0..4."),
    operators: Optional[List[str]] = typer.Option(None, "--operator", help="Restringe a estes operadores."),
    out: Optional[Path] = typer.Option(None, "--out", help="Grava a tabela em CSV neste arquivo."),
):
    """Verifica os gradientes de todos os operadores e da rede composta por diferenças finitas."""
    try:
        cases = standard_cases() + gradcheck_cases()
        if operators:
            unknown = sorted(set(operators) - {c.name for c in cases})
            if unknown:
                raise typer.BadParameter(f"operadores desconhecidos: {unknown}", param_hint="--operator")
            cases = [c for c in cases if c.name in operators]
        results = run_gradcheck(seeds or DEFAULT_SEEDS, cases=cases)
        if out is not None:
            write_gradcheck_csv(out, results)

        table = Table(title="Verificação de gradientes")
        for column in ("operador", "semente", "erro relativo", "tolerância", "resultado"):
            table.add_column(column)
        for r in results:
            error = f"{r.max_rel_error:.2e}" if r.max_rel_error is not None else (r.error or "-")
            table.add_row(r.operator, str(r.seed), error, f"{r.tolerance:.0e}",
                          "[green]ok[/green]" if r.passed else "[red]FALHOU[/red]")
        console.print(table)

        failed = sorted({r.operator for r in results if not r.passed})
        if failed:
            typer.echo(f"operadores com falha: {', '.join(failed)}", err=True)
            raise typer.Exit(code=1)
    except (typer.Exit, click.ClickException):
        raise
    except Exception as e:
        raise handle_command_error(e, "gradcheck")


@app.command()
def compare(
    train_data: Path = typer.Option(..., "--train", help="Dataset de treino."),
    test_data: Path = typer.Option(..., "--test", help="Dataset de teste."),
    out: Path = typer.Option(..., "--out"),
    seeds: Optional[List[int]] = typer.Option(None, "--seed", help="Sementes (repetível); padrão 0..4."),
    lower: Optional[float] = typer.Option(None, "--l"),
    upper: Optional[float] = typer.Option(None, "--u"),
    greedy_secondary: int = typer.Option(2, "--ns", min=2, help="n_S da variante gulosa."),
    iters: Optional[int] = typer.Option(None, "--iters"),
    preset: PresetChoice = typer.Option(PresetChoice.synthetic, "--preset"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML/JSON com seções train/model/proposals/eval."),
):
    """Experimento de controle: rcnn, random, scene e rstar (em cada par l, u) treinados e avaliados por semente."""
    try:
        overrides = _overrides(config)
        base = synthetic_train_config() if preset == PresetChoice.synthetic else TrainConfig()
        train_section = _section(overrides, "train")
        cfg = build_config(TrainConfig, base=base, file_overrides=train_section,
                           flag_overrides={"iterations": iters})
        # --l/--u ou bounds no arquivo fixam um único par; sem eles, a varredura padrão
        sweep = None
        if lower is not None or upper is not None or "bounds" in train_section:
            sweep = [OverlapBounds(l=lower if lower is not None else cfg.bounds.l,
                                   u=upper if upper is not None else cfg.bounds.u)]
        proposal_cfg = build_config(ProposalConfig, file_overrides=_section(overrides, "proposals"))
        eval_cfg = build_config(EvalConfig, file_overrides=_section(overrides, "eval"),
                                flag_overrides={"proposals": proposal_cfg})
        variants = default_variants(sweep, greedy_secondary)
        seeds = list(seeds or DEFAULT_SEEDS)
        manifest = RunManifest(command="compare", version=_version(), seed=seeds[0], resolved_config={
            "train": cfg.model_dump(mode="json"),
            "proposals": proposal_cfg.model_dump(mode="json"),
            "eval": eval_cfg.model_dump(mode="json"),
            "variants": [v.model_dump(mode="json") for v in variants],
            "seeds": seeds,
        })

        train_set = _dataset_repo(train_data).load()
        test_set = _dataset_repo(test_data).load()
        model_section = _section(overrides, "model")
        base_model = ModelConfig.model_validate({"class_names": train_set.class_names, **model_section}) \
            if model_section else None
        report = compare_variants(train_set, test_set, variants, seeds, cfg, model_cfg=base_model,
                                  proposal_cfg=proposal_cfg, eval_cfg=eval_cfg)
        outputs = [write_comparison_csv(out / COMPARE_FILE, report)]
        _finish(out, manifest, outputs)

        table = Table(title="mAP mediano por variante")
        table.add_column("variante")
        table.add_column("mAP", justify="right")
        for name, value in report.median_map.items():
            table.add_row(name, f"{value:.4f}")
        console.print(table)
    except (typer.Exit, click.ClickException):
        raise
    except Exception as e:
        raise handle_command_error(e, "compare")


@app.command()
def proposals(
    data: Path = typer.Option(..., "--data"),
    out: Path = typer.Option(..., "--out", help="Arquivo de propostas de saída."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML/JSON com a seção 'proposals'."),
):
    """Grava as propostas geradas para cada imagem do dataset, no formato de arquivo de propostas."""
    try:
        proposal_cfg = build_config(ProposalConfig, file_overrides=_section(_overrides(config), "proposals"))
        dataset = _dataset_repo(data).load()
        collection = {image.image_id: generate(image.extent, proposal_cfg, image_id=image.image_id)
                      for image in dataset.images}
        save_proposals(out, collection)
        typer.echo(f"{sum(len(s) for s in collection.values())} propostas gravadas em {out}")
    except (typer.Exit, click.ClickException):
        raise
    except Exception as e:
        raise handle_command_error(e, "proposals")
