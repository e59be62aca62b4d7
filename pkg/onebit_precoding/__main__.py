import sys

from onebit_precoding.cli import main

sys.exit(main())
