from ganinvert.main import main

raise SystemExit(main())
