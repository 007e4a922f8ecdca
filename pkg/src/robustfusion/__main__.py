import sys

from robustfusion.cli import main

sys.exit(main())
