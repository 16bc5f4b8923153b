from __future__ import annotations

import click

from .server import serve


@click.command()
@click.option("--model", "model_name", required=True, help="checkpoint path or name")
@click.option("--mode", type=click.Choice(["masked", "causal"]), default="masked")
@click.option("--device", default="cpu")
@click.option("--dtype", default=None, help="torch dtype name, e.g. float32")
@click.option("--port", type=int, default=8123)
@click.option("--host", default="127.0.0.1")
def main(model_name, mode, device, dtype, port, host) -> None:
    """Serve a checkpoint behind the memex/1 protocol."""
    serve(model_name, mode=mode, device=device, port=port, host=host, dtype=dtype)


if __name__ == "__main__":
    main()
