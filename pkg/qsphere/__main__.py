from qsphere.main import main

raise SystemExit(main())
