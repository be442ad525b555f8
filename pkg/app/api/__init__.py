# HTTP routers; app.main includes each module's router
