import sys

from .figures import main

if __name__ == "__main__":
    sys.exit(main())
