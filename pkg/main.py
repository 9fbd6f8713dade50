"""Main entry point for the Replay Engine."""

import logging
import sys
from pathlib import Path

import click
from dotenv import load_dotenv

from replay_engine.config.loader import load_config
from replay_engine.config.settings import ExperimentConfig, GeneratorConfig, RlConfig, Transport
from replay_engine.data.generator import generate_synthetic
from replay_engine.data.scenario_io import write_json_mirror, write_scenario_file
from replay_engine.data.scenario_loader import load_scenarios
from replay_engine.evaluation.evaluator import PolicyEvaluator
from replay_engine.evaluation.metrics import EvalMode
from replay_engine.exceptions import CheckpointError, ConfigError
from replay_engine.models.base_policy import NetworkPolicy
from replay_engine.models.checkpoint import load_checkpoint
from replay_engine.sim.benchmark import bench_step
from replay_engine.training.bc import run_bc
from replay_engine.training.expert import build_expert_dataset
from replay_engine.training.rl import run_rl
from replay_engine.utils.logging_config import setup_logging
from replay_engine.utils.manifest import RunManifest

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2

SCENARIOS_NAME = "scenarios.bin"
MIRROR_NAME = "scenarios.jsonl"
BENCH_NAME = "bench.csv"


def _with_seed(config: ExperimentConfig, seed):
    if seed is None:
        return config
    return config.model_copy(update={"train": config.train.model_copy(update={"seed": seed})})


def _generator_config(config: ExperimentConfig, **overrides) -> GeneratorConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return GeneratorConfig(**{**config.generator.model_dump(), **overrides})
    except ValueError as exc:
        raise ConfigError(f"invalid generator settings: {exc}") from exc


def _rl_config(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return config
    try:
        rl = RlConfig(**{**config.train.rl.model_dump(), **overrides})
    except ValueError as exc:
        raise ConfigError(f"invalid RL settings: {exc}") from exc
    return config.model_copy(update={"train": config.train.model_copy(update={"rl": rl})})


def _run(manifest: RunManifest, out_dir: Path, body) -> None:
    """Run a command body, write the manifest and map failures to exit codes."""
    status, code = "ok", 0
    try:
        for path in body() or []:
            manifest.add_output(path, out_dir)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        status, code = "failed", EXIT_USAGE
        click.echo(f"Error: {exc}", err=True)
    except Exception as exc:
        status, code = "failed", EXIT_RUNTIME
        logger.exception(f"{manifest.command} failed")
        click.echo(f"Error: {exc}", err=True)
    manifest.finish(out_dir, status=status)
    if code:
        sys.exit(code)


def _load(config_path):
    try:
        return load_config(config_path)
    except ConfigError as exc:
        click.echo(f"Error: {exc}", err=True)
        sys.exit(EXIT_USAGE)


@click.group()
@click.option('--log-level', default=None,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']),
              help='Set logging level (default: $REPLAY_ENGINE_LOG_LEVEL or INFO)')
@click.option('--log-file', type=click.Path(), help='Log file path')
def cli(log_level, log_file):
    """Replay Engine CLI."""
    load_dotenv()
    setup_logging(level=log_level, log_file=log_file)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(), help='Key-value config file')
@click.option('--out-dir', '-o', type=click.Path(), required=True, help='Output directory')
@click.option('--seed', type=int, default=0, show_default=True, help='Generator seed')
@click.option('--num-scenarios', type=int, help='Override generator.num_scenarios')
@click.option('--segment-seconds', type=float, help='Override generator.segment_seconds')
@click.option('--json-mirror', is_flag=True, help='Also write the JSON-lines mirror')
def generate(config_path, out_dir, seed, num_scenarios, segment_seconds, json_mirror):
    """Generate a synthetic scenario file."""
    config = _load(config_path)
    out_dir = Path(out_dir)
    manifest = RunManifest.start("generate", config, seeds={"generator": seed})

    def body():
        gen = _generator_config(config, num_scenarios=num_scenarios, segment_seconds=segment_seconds)
        click.echo(f"Generating {gen.num_scenarios} scenarios of {gen.segment_seconds:g} s (seed {seed})...")
        scenarios = generate_synthetic(gen, seed, config.sim)
        outputs = [out_dir / SCENARIOS_NAME]
        write_scenario_file(scenarios, outputs[0])
        if json_mirror:
            outputs.append(out_dir / MIRROR_NAME)
            write_json_mirror(scenarios, outputs[1])
        click.echo(f"Wrote {len(scenarios)} scenarios to {outputs[0]}")
        return outputs

    _run(manifest, out_dir, body)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(), help='Key-value config file')
@click.option('--data', 'data_path', type=click.Path(), required=True, help='Training scenario file')
@click.option('--out-dir', '-o', type=click.Path(), required=True, help='Output directory')
@click.option('--workers', type=int, help='Gradient workers (train.bc.num_workers)')
@click.option('--seed', type=int, help='Override train.seed')
@click.option('--epochs', type=int, help='Stop after this many epochs')
@click.option('--resume', 'resume_path', type=click.Path(), help='BC checkpoint to resume from')
def bc(config_path, data_path, out_dir, workers, seed, epochs, resume_path):
    """Behavioral cloning on the logged trajectories."""
    config = _with_seed(_load(config_path), seed)
    if workers is not None:
        config = config.model_copy(update={"train": config.train.model_copy(
            update={"bc": config.train.bc.model_copy(update={"num_workers": workers})})})
    out_dir = Path(out_dir)
    manifest = RunManifest.start("bc", config, seeds={"train": config.train.seed}, dataset_paths=[data_path])

    def body():
        resume = load_checkpoint(resume_path, expected_model=config.model) if resume_path else None
        dataset = build_expert_dataset(data_path, config)
        result = run_bc(config, dataset, out_dir, resume=resume, max_epochs=epochs)
        final = result.history.iloc[-1] if len(result.history) else None
        if final is not None:
            click.echo(f"BC finished: loss {final['loss']:.4f} after {int(final['step'])} steps")
        outputs = [out_dir / "curves.csv", *result.checkpoints]
        if result.final_checkpoint is not None:
            outputs.append(result.final_checkpoint)
        return outputs

    _run(manifest, out_dir, body)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(), help='Key-value config file')
@click.option('--data', 'data_path', type=click.Path(), required=True, help='Training scenario file')
@click.option('--out-dir', '-o', type=click.Path(), required=True, help='Output directory')
@click.option('--init-checkpoint', type=click.Path(), help='BC or RL checkpoint (default: from scratch)')
@click.option('--eval-data', type=click.Path(), help='Held-out scenarios for the evaluation actor')
@click.option('--workers', type=int, help='Learner count (train.rl.num_learners)')
@click.option('--seed', type=int, help='Override train.seed')
@click.option('--steps', type=int, help='Override train.rl.total_agent_steps')
@click.option('--synchronous', is_flag=True, help='Deterministic collect-then-update loop')
@click.option('--transport', type=click.Choice([t.value for t in Transport]),
              help='Gradient exchange: one process (inprocess) or one process per learner (socket)')
@click.option('--rank', type=int, help='This process\'s learner rank (socket transport)')
@click.option('--address', help='host:port of the all-reduce server, hosted by rank 0 (socket transport)')
def rl(config_path, data_path, out_dir, init_checkpoint, eval_data, workers, seed, steps, synchronous,
       transport, rank, address):
    """PPO fine-tuning with V-trace.

    With --transport socket, start one process per learner with the same
    --workers and --address and ranks 0 to workers - 1.
    """
    config = _with_seed(_load(config_path), seed)
    usage_error = None
    try:
        config = _rl_config(
            config, num_learners=workers, total_agent_steps=steps, synchronous=synchronous or None,
            transport=transport, rank=rank, address=address,
        )
    except ConfigError as exc:
        usage_error = exc
    out_dir = Path(out_dir)
    datasets = [data_path] + ([eval_data] if eval_data else [])
    manifest = RunManifest.start("rl", config, seeds={"train": config.train.seed}, dataset_paths=datasets)

    def body():
        if usage_error is not None:
            raise usage_error
        checkpoint = None
        if init_checkpoint:
            if not Path(init_checkpoint).is_file():
                raise CheckpointError(f"checkpoint not found: {init_checkpoint}")
            checkpoint = load_checkpoint(init_checkpoint, expected_model=config.model)
        result = run_rl(config, data_path, out_dir, checkpoint, eval_data)
        summary = f"RL finished after {result.agent_steps} agent steps"
        if len(result.curves):
            last = result.curves.iloc[-1]
            summary += (
                f": score {last['mean_scenario_score']:.4f}, "
                f"collision-free {last['mean_collision_free']:.4f}"
            )
        click.echo(summary)
        outputs = [out_dir / "scaling.json", result.final_checkpoint]
        if len(result.curves):
            outputs.append(out_dir / "curves.csv")
        if result.best_checkpoint is not None:
            outputs.append(result.best_checkpoint)
        return outputs

    _run(manifest, out_dir, body)


@cli.command(name='eval')
@click.option('--config', 'config_path', type=click.Path(), help='Key-value config file')
@click.option('--checkpoint', 'checkpoint_path', type=click.Path(), help='Policy checkpoint')
@click.option('--data', 'data_path', type=click.Path(), required=True, help='Scenario file')
@click.option('--out-dir', '-o', type=click.Path(), required=True, help='Output directory')
@click.option('--mode', type=click.Choice([m.value for m in EvalMode]), default=EvalMode.DONES.value,
              show_default=True, help='Terminate on done signals or latch them')
@click.option('--seed', type=int, default=0, show_default=True, help='Sampling seed')
@click.option('--replay-log', is_flag=True, help='Evaluate the logged ego instead of a policy')
def evaluate(config_path, checkpoint_path, data_path, out_dir, mode, seed, replay_log):
    """Evaluate a checkpoint (greedy actions) on a scenario file."""
    config = _load(config_path)
    out_dir = Path(out_dir)
    manifest = RunManifest.start("eval", config, seeds={"eval": seed}, dataset_paths=[data_path])

    def body():
        policy = None
        if not replay_log:
            if not checkpoint_path or not Path(checkpoint_path).is_file():
                raise CheckpointError(f"a readable --checkpoint is required, got {checkpoint_path!r}")
            policy = NetworkPolicy.from_checkpoint(load_checkpoint(checkpoint_path), greedy=True)
        evaluator = PolicyEvaluator(config)
        result = evaluator.evaluate(policy, data_path, EvalMode(mode), seed=seed, replay_log=replay_log)
        summary = result.aggregate
        click.echo(f"Scenarios: {summary['num_scenarios']} (degenerate: {summary['degenerate_count']})")
        for key in ("mean_scenario_score", "failure_rate", "progress_ratio"):
            if key in summary:
                click.echo(f"{key:22} {summary[key]:.4f}")
        return result.write(out_dir)

    _run(manifest, out_dir, body)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(), help='Key-value config file')
@click.option('--data', 'data_path', type=click.Path(), help='Scenario file (default: generate 32 scenarios)')
@click.option('--out-dir', '-o', type=click.Path(), required=True, help='Output directory')
@click.option('--batch-sizes', default='1,16,32', show_default=True, help='Comma-separated batch sizes')
@click.option('--steps', type=int, default=1000, show_default=True, help='Timed steps per batch size')
@click.option('--seed', type=int, default=0, show_default=True, help='Generator seed without --data')
def bench(config_path, data_path, out_dir, batch_sizes, steps, seed):
    """Time the batched simulator step across batch sizes."""
    config = _load(config_path)
    try:
        sizes = [int(s) for s in batch_sizes.split(',') if s.strip()]
    except ValueError:
        raise click.BadParameter(f"not a comma-separated list of integers: {batch_sizes}", param_hint='--batch-sizes')
    if not sizes or min(sizes) < 1:
        raise click.BadParameter("batch sizes must be >= 1", param_hint='--batch-sizes')
    out_dir = Path(out_dir)
    manifest = RunManifest.start(
        "bench", config, seeds={"generator": seed}, dataset_paths=[data_path] if data_path else []
    )

    def body():
        if data_path:
            scenarios = load_scenarios(data_path)
        else:
            gen = _generator_config(config, num_scenarios=max(sizes))
            scenarios = generate_synthetic(gen, seed, config.sim)
        table = bench_step(scenarios, sizes, steps=steps, sim=config.sim, actions=config.actions)
        for _, row in table.iterrows():
            click.echo(
                f"batch {int(row['batch_size']):4d}: {row['mean_step_ms']:8.3f} ms/step "
                f"{row['amortized_us_per_scenario']:10.1f} us/scenario"
            )
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / BENCH_NAME
        table.to_csv(path, index=False)
        return [path]

    _run(manifest, out_dir, body)


if __name__ == '__main__':
    cli()
