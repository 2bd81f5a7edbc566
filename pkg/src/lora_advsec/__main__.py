import sys

from lora_advsec.cli import main

if __name__ == "__main__":
    sys.exit(main())
