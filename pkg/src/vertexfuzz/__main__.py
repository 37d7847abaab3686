import sys

from vertexfuzz.cli import main

sys.exit(main())
