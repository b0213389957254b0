from shlr.cli import main
import sys
sys.exit(main())
