from __future__ import annotations

from turbine_twin.cli import app

if __name__ == "__main__":
    app()
