import os
import sys
import logging

logging.basicConfig(
    level=logging.WARNING,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    handlers=[
        logging.StreamHandler(sys.stderr or open(os.devnull, "w")),
    ],
)


def _load_main():
    try:
        from geoflow.cli import main
    except ModuleNotFoundError as e:
        missing = getattr(e, "name", "") or ""
        if missing in ("numpy", "scipy", "numba"):
            sys.stderr.write(
                f"依赖缺失：{missing}\n"
                "请使用当前解释器安装依赖：\n"
                f"  {sys.executable} -m pip install -r requirements.txt\n"
            )
        raise
    return main


def main() -> None:
    geoflow_main = _load_main()
    raise SystemExit(geoflow_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
