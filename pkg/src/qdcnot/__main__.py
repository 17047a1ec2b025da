from qdcnot.cli import main

raise SystemExit(main())
