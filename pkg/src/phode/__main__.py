from phode.cli import main

raise SystemExit(main())
