# cli.py

import logging
import os
import sys

import click

from modules.pipeline.report import format_report, read_report, report_to_frame
from modules.pipeline.manifest import load_manifest
from modules.pipeline.service import METHODS, MASK_SOURCES, PipelineService, RunConfig, gen_model, verify_model
from modules.pipeline.sweep import SWEEP_METHODS, format_sweep, parse_block_sizes, parse_patterns, sweep_model, sweep_to_frame
from modules.pipeline.tensor_io import load_tensor
from utils.config import cfg
from utils.errors import render_error
from utils.log import setup_logging

logger = logging.getLogger("thanos.cli")


@click.group()
@click.option("-v", "--verbose", count=True, help="-v = INFO, -vv = DEBUG.")
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Também grava o log neste arquivo.")
def cli(verbose, log_file):
    """Poda de camadas lineares com Thanos e baselines (magnitude, wanda, sparsegpt)."""
    setup_logging(verbose, log_file)


@cli.command()
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Manifesto JSON do modelo.")
@click.option("--calib", required=True, type=click.Path(dir_okay=False), help="Tensor THNS d×b×a.")
@click.option("--method", type=click.Choice(METHODS), default="thanos", show_default=True)
@click.option("--sparsity", type=float, default=0.5, show_default=True, help="Fração p a remover.")
@click.option("--pattern", default="unstructured", show_default=True, help="unstructured, structured ou n:m (ex.: 2:4).")
@click.option("--blocksize", type=int, default=None, help="Tamanho de bloco B.")
@click.option("--mask-blocksize", type=int, default=None, help="Bs do SparseGPT.")
@click.option("--alpha", type=float, default=None, help="Fração de linhas outlier (n:m/estruturado).")
@click.option("--damp", type=float, default=None, help="lambda_rel do amortecimento.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--row-chunk", type=int, default=None, help="Sistemas por lote nas resoluções em lote.")
@click.option("--mask-from", type=click.Choice(MASK_SOURCES), default="psi", show_default=True,
              help="Thanos não estruturado: máscara própria (psi) ou a do wanda.")
@click.option("--out", default="pruned", show_default=True, type=click.Path(file_okay=False))
@click.option("--report", "report_path", default=None, type=click.Path(dir_okay=False),
              help="Caminho do relatório JSON (padrão: <out>/report.json).")
@click.option("--timing/--no-timing", default=False, show_default=True,
              help="Grava o tempo de parede por camada. Sem tempo (padrão), duas execuções iguais geram bytes idênticos.")
def prune(model, calib, method, sparsity, pattern, blocksize, mask_blocksize, alpha, damp, seed,
          row_chunk, mask_from, out, report_path, timing):
    """Poda o modelo bloco a bloco e grava pesos, manifesto e relatório."""
    run = RunConfig(method=method, sparsity=sparsity, pattern=pattern, block_size=blocksize,
                    mask_block_size=mask_blocksize, alpha=alpha, lambda_rel=damp, seed=seed,
                    row_chunk=row_chunk, mask_from=mask_from, timing=timing)
    doc = PipelineService(run).run_files(model, calib, out, report_path)
    t = doc["totals"]
    click.echo(f"✅ {t['layers']} camadas podadas • esparsidade {t['sparsity']:.4f} • "
               f"perda {t['loss_before']:.6g} -> {t['loss_after']:.6g}")
    click.echo(f"📄 relatório: {report_path or os.path.join(out, 'report.json')}")


@cli.command()
@click.option("--out", default="toy_model", show_default=True, type=click.Path(file_okay=False))
@click.option("--blocks", type=int, default=2, show_default=True)
@click.option("--layers", type=int, default=2, show_default=True, help="Camadas por bloco.")
@click.option("--dims", default="64", show_default=True, help="Largura única ou lista 'in,l1,l2,...'.")
@click.option("--samples", type=int, default=None, help="d amostras de calibração.")
@click.option("--tokens", type=int, default=None, help="Colunas a de cada amostra.")
@click.option("--seed", type=int, default=None)
def gen(out, blocks, layers, dims, samples, tokens, seed):
    """Gera um modelo de brinquedo aleatório e o tensor de calibração."""
    model_path, calib_path = gen_model(out, blocks, layers, dims, samples=samples, seed=seed, tokens=tokens)
    click.echo(f"✅ modelo: {model_path}")
    click.echo(f"✅ calibração: {calib_path}")


@cli.command()
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Manifesto original.")
@click.option("--pruned", required=True, type=click.Path(dir_okay=False), help="Manifesto podado.")
@click.option("--calib", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", default=None, type=click.Path(dir_okay=False))
@click.option("--rows", type=int, default=None, help="Linhas sorteadas por camada para o oráculo.")
@click.option("--seed", type=int, default=0, show_default=True)
def verify(model, pruned, calib, report_path, rows, seed):
    """Confere um modelo podado contra o oráculo de mínimos quadrados restritos."""
    checks = verify_model(model, pruned, calib, report_path, rows=rows, seed=seed)
    click.echo(f"✅ {len(checks)} verificações ok")


@cli.command()
@click.option("--model", required=True, type=click.Path(dir_okay=False), help="Manifesto JSON do modelo.")
@click.option("--calib", required=True, type=click.Path(dir_okay=False), help="Tensor THNS d×b×a.")
@click.option("--method", type=click.Choice(SWEEP_METHODS), default="thanos", show_default=True)
@click.option("--sparsity", type=float, default=0.5, show_default=True, help="Fração p nos padrões não estruturados.")
@click.option("--blocksizes", default="8,16,32,64,128", show_default=True, help="Lista de B separada por vírgula.")
@click.option("--patterns", default="unstructured,4:8,2:4", show_default=True, help="Padrões separados por vírgula.")
@click.option("--alpha", type=float, default=None, help="Fração de linhas outlier nos padrões n:m.")
@click.option("--damp", type=float, default=None, help="lambda_rel do amortecimento.")
@click.option("--csv", "csv_path", default=None, type=click.Path(dir_okay=False), help="Também grava a tabela em CSV.")
def sweep(model, calib, method, sparsity, blocksizes, patterns, alpha, damp, csv_path):
    """Poda o mesmo modelo para cada tamanho de bloco B e compara as perdas."""
    sizes, pats = parse_block_sizes(blocksizes), parse_patterns(patterns)
    base = RunConfig(method=method, sparsity=sparsity, lambda_rel=damp)
    rows = sweep_model(load_manifest(model), load_tensor(calib), sizes, pats, base, alpha=alpha)
    click.echo(format_sweep(rows))
    if csv_path:
        sweep_to_frame(rows).to_csv(csv_path, index=False)
        click.echo(f"📄 CSV: {csv_path}")


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False), default=lambda: cfg.report.path)
@click.option("--csv", "csv_path", default=None, type=click.Path(dir_okay=False), help="Também grava as camadas em CSV.")
def report(path, csv_path):
    """Mostra um relatório JSON de poda."""
    doc = read_report(path)
    click.echo(format_report(doc))
    if csv_path:
        report_to_frame(doc).to_csv(csv_path, index=False)
        click.echo(f"📄 CSV: {csv_path}")


def cli_main(argv=None) -> int:
    """Executa a CLI e traduz erros em código de saída (1 uso, 2 dados, 3 numérico)."""
    try:
        rv = cli.main(args=argv, prog_name="thanos", standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except click.exceptions.Abort:
        click.echo("Abortado.", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1 if isinstance(e, click.UsageError) else e.exit_code
    except Exception as e:
        logger.debug("falha", exc_info=True)
        return render_error(e, show_details=logging.getLogger().isEnabledFor(logging.DEBUG))


if __name__ == "__main__":
    sys.exit(cli_main())
