"""Frozen oracle values. Each constant names the script that produced it."""

# oracles/dejong_minima.py: (x, y, J) of the eight minima at alpha = 0
DEJONG_MINIMA_ALPHA0 = [
    (-31.84110887112371, 31.84110887112371, 0.99726152429480546),
    (-31.841108870782131, 28.15889112748346, 0.99726152424789436),
    (-28.15889112748346, 31.841108870782131, 0.99726152424789436),
    (-28.158891126964044, 28.158891126964044, 0.99726152417255635),
    (12.086862688841634, -12.086862688841634, 0.99794660171270113),
    (12.086862698115593, -17.913137284075349, 0.99794660184610612),
    (17.913137284075349, -12.086862698115593, 0.99794660184610612),
    (17.913137289426731, -17.913137289426731, 0.99794660190825255),
]

# oracles/dejong_basin_grid.py: fraction of 200 x 200 grid-cell starts at
# alpha = 0 that converge to each minimum (same order as DEJONG_MINIMA_ALPHA0).
DEJONG_BASIN_WEIGHTS_ALPHA0 = [0.0411, 0.104175, 0.104175, 0.109675, 0.112375, 0.2027, 0.2027, 0.123]

# oracles/dejong_minima.py 1/3: stationary points at alpha = pi / 3. The landscape is
# not rotation-equivariant, so these are not the alpha = 0 points rotated.
DEJONG_MINIMA_PI_3 = [
    (-43.525798535445862, -11.530183199117365, 0.99652553465664139),
    (-40.431341027683755, -13.525798535610313, 0.99652553463540684),
    (-41.530183198881027, -8.4357256914505705, 0.99652553464375538),
    (-38.435725691150018, -10.431341027952361, 0.99652553461692328),
    (16.494669381046418, 4.491537383357864, 0.99789334559223982),
    (21.489224727825573, 1.494669384760176, 0.99789334563705004),
    (19.491537380420307, 9.4860927287541437, 0.99789334562232994),
    (24.486092727287265, 6.4892247301706114, 0.99789334565394911),
]

# oracles/dejong_minima.py 2/9: stationary points at alpha = 2 pi / 9.
DEJONG_MINIMA_2PI_9 = [
    (-44.880552470277428, 3.7642189652400871, 0.99573819189773887),
    (-42.331475546215697, 1.082114116769069, 0.99573819188417034),
    (-42.198447621677079, 6.313295889179229, 0.99573819188335251),
    (-39.649370697792643, 3.631191040704136, 0.99573819186500229),
    (17.019786037098703, -1.57546572377597, 0.99783041363554132),
    (20.85909401191825, -5.9615472545425696, 0.99783041366520141),
    (21.405867567486837, 2.2638422515712999, 0.99783041366846448),
    (25.245175544369369, -2.1222392791990675, 0.99783041368664198),
]
