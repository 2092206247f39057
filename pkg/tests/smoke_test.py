import subprocess
import sys


def test_chaoscatch_version():
    try:
        # The module entry point must start without any configuration
        result = subprocess.run(  # noqa: S603
            [sys.executable, "-m", "chaoscatch", "--version"],
            capture_output=True,
            text=True,
            check=False,
            shell=False,
        )

        assert "chaoscatch version:" in result.stdout.strip()
        assert result.returncode == 0

    except Exception as e:
        error_message = f"An unexpected error occurred: {e}"
        raise RuntimeError(error_message) from e


if __name__ == "__main__":
    test_chaoscatch_version()
