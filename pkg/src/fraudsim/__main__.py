import sys

from fraudsim.cli import main

sys.exit(main())
