use quartic::special_functions::*;

// mpmath, 25 digits: J_n, Y_n, e^{-x}I_n, e^{x}K_n for n = 0..5
const ORDER_TABLE: [(f64, [[f64; 6]; 4]); 8] = [
    (0.001, [[9.9999975000001562e-1, 4.999999375000026e-4, 1.2499998958333366e-7, 2.0833332031250033e-11, 2.604166536458336e-15, 2.6041665581597242e-19], [-4.4714166113759233, -6.3662216723113943e+2, -1.2732398630456675e+6, -5.0929588155605027e+9, -3.0557751620123153e+13, -2.4446200786802641e+17], [9.9900074958351556e-1, 4.9950031235422134e-4, 1.2487507288542741e-7, 2.0812511713977246e-11, 2.6015639317276068e-15, 2.6015639100479077e-19], [7.0307160023782515, 1.0009967345590685e+3, 2.0020004998341393e+6, 8.0080030003332917e+9, 4.804802000400025e+13, 3.84384168040005e+17]]),
    (0.3, [[9.7762624653829609e-1, 1.4831881627310401e-1, 1.1165861949063964e-2, 5.5934304774884612e-4, 2.0999005912958371e-5, 6.3044326337710723e-7], [-8.0727357780451947e-1, -2.293105138388529, -1.4480094011452341e+1, -1.9077481501430935e+2, -3.8010162062747346e+3, -1.0116965735231195e+5], [7.5758062518254785e-1, 1.123775606398388e-1, 8.3968875836225309e-3, 4.1905952487171952e-4, 1.5697086188140467e-5, 4.70559854640403e-7], [1.8526273007720143, 4.1251577622444697, 2.9353679049068479e+1, 3.9550754508315752e+2, 7.9395045807122189e+3, 2.1211562969740899e+5]]),
    (1.0, [[7.6519768655796655e-1, 4.4005058574493352e-1, 1.1490348493190048e-1, 1.9563353982668406e-2, 2.476638964109955e-3, 2.4975773021123443e-4], [8.8256964215676958e-2, -7.8121282130028872e-1, -1.6506826068162544, -5.8215176059647288, -3.3278423028972119e+1, -2.6040586662581222e+2], [4.6575960759364044e-1, 2.0791041534970845e-1, 4.9938776894223539e-2, 8.1553077728142938e-3, 1.0069302573377759e-3, 9.9865714112086907e-5], [1.144463079806895, 1.6361534862632582, 4.4167700523334115, 1.9303233695596904e+1, 1.2023617222591484e+2, 9.811926115029156e+2]]),
    (2.5, [[-4.8383776468197996e-2, 4.9709410246427404e-1, 4.4605905843961723e-1, 2.1660039103911352e-1, 7.3781880054255233e-2, 1.950162513450322e-2], [4.9807035961523189e-1, 1.459181379667858e-1, -3.8133584924180325e-1, -7.56055496753671e-1, -1.4331973429670071, -3.8301760007407519], [2.7004644161220274e-1, 2.0658464953126655e-1, 1.047787219871895e-1, 3.893869435176336e-2, 1.1325855542957431e-2, 2.6959566142995797e-3], [7.5954869032809958e-1, 9.0017442390787809e-1, 1.479688229454402, 3.2676755910349214, 9.3221096479382133, 3.3098426464437204e+1]]),
    (7.0, [[3.000792705195556e-1, -4.6828234823458327e-3, -3.0141722008594012e-1, -1.6755558799533424e-1, 1.5779814466136792e-1, 3.4789632475118329e-1], [-2.5949743967209265e-2, -3.0266723702418487e-1, -6.0526609468272127e-2, 2.6808060304231508e-1, 2.903099835045422e-1, 6.3702235248590286e-2], [1.5373774467288125e-1, 1.4228923470959867e-1, 1.1308367761299591e-1, 7.7669990359315296e-2, 4.650940016215423e-2, 2.4516390173996175e-2], [4.6584509609301589e-1, 4.9807157509547654e-1, 6.0815126040600919e-1, 8.455865810417675e-1, 1.3329397584418099, 2.3689463049752645]]),
    (20.0, [[1.6702466434058315e-1, 6.6833124175850046e-2, -1.6034135192299815e-1, -9.8901394560449676e-2, 1.3067093355486325e-1, 1.5116976798239497e-1], [6.2640596809383831e-2, -1.655116143625213e-1, -7.9191758245635961e-2, 1.496732627133941e-1, 1.2409373705965419e-1, -1.0003576788953243e-1], [8.9780311884826022e-2, 8.7506222183288665e-2, 8.1029689666497155e-2, 7.1300284249989234e-2, 5.9639604391500385e-2, 4.744444249338908e-2], [2.7854487665718222e-1, 2.8542549694072645e-1, 3.0708742635125487e-1, 3.4684298221097742e-1, 4.1114032101454809e-1, 5.1129911061679666e-1]]),
    (60.0, [[-9.147180408906187e-2, 4.6598383758166318e-2, 9.3025083547667413e-2, -4.0396711521655157e-2, -9.7064754699832929e-2, 2.74547442283441e-2], [4.7358952209449399e-2, 9.1869609369866895e-2, -4.4296631897120503e-2, -9.4822718163008262e-2, 3.4814360080819676e-2, 9.9464632840450886e-2], [5.1611549173609841e-2, 5.1179630189028718e-2, 4.9905561500642217e-2, 4.785259275565257e-2, 4.512030222507696e-2, 4.1836552458975642e-2], [1.6146817823629393e-1, 1.6280823094404427e-1, 1.6689511926776207e-1, 1.7393457222856174e-1, 1.8428857649061824e-1, 1.9850638242731084e-1]]),
    (300.0, [[-3.3298554876305668e-2, -3.188743137749995e-2, 3.3085972000455668e-2, 3.2328577670839359e-2, -3.2439400447038881e-2, -3.3193628349427063e-2], [-3.1831889730003398e-2, 3.3245548121310216e-2, 3.2053526717478799e-2, -3.2818167765077165e-2, -3.2709890072780343e-2, 3.1945904029803023e-2], [2.3042558415085462e-2, 2.3004122040268951e-2, 2.2889197601483669e-2, 2.2698932738915835e-2, 2.2435218946705352e-2, 2.2100660233670359e-2], [7.2330031739607302e-2, 7.2450481667258409e-2, 7.2813034950722358e-2, 7.3421322133268041e-2, 7.4281461393387719e-2, 7.540216110375838e-2]]),
];

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs() + 1e-16
}

#[test]
fn order_arrays_match_table() {
    for (x, [j, y, i, k]) in ORDER_TABLE {
        let ja = bessel_j_array(5, x).unwrap();
        let ya = bessel_y_array(5, x).unwrap();
        let ia = bessel_i_scaled_array(5, x).unwrap();
        let ka = bessel_k_scaled_array(5, x).unwrap();
        for n in 0..6 {
            assert!(close(ja[n], j[n], 1e-12), "J{n}({x}) {} vs {}", ja[n], j[n]);
            assert!(close(ya[n], y[n], 1e-12), "Y{n}({x}) {} vs {}", ya[n], y[n]);
            assert!(close(ia[n], i[n], 1e-12), "I{n}({x}) {} vs {}", ia[n], i[n]);
            assert!(close(ka[n], k[n], 1e-12), "K{n}({x}) {} vs {}", ka[n], k[n]);
        }
    }
}

#[test]
fn order_arrays_agree_with_scalar_routines() {
    for &x in &[0.01, 0.7, 3.0, 11.0, 40.0] {
        let ja = bessel_j_array(1, x).unwrap();
        let ya = bessel_y_array(1, x).unwrap();
        let ka = bessel_k_scaled_array(1, x).unwrap();
        assert!(close(ja[1], bessel_j1(x).unwrap(), 1e-13));
        assert!(close(ya[1], bessel_y1(x).unwrap(), 1e-13));
        let (k0, k1) = bessel_k01_scaled(x).unwrap();
        assert_eq!((ka[0], ka[1]), (k0, k1));
    }
}

#[test]
fn order_array_wronskians() {
    // J_{n+1}Y_n − J_nY_{n+1} = 2/(πx) and I_nK_{n+1} + I_{n+1}K_n = 1/x
    for &x in &[0.05, 0.9, 4.0, 17.0, 150.0] {
        let j = bessel_j_array(6, x).unwrap();
        let y = bessel_y_array(6, x).unwrap();
        let i = bessel_i_scaled_array(6, x).unwrap();
        let k = bessel_k_scaled_array(6, x).unwrap();
        for n in 0..6 {
            let w = j[n + 1] * y[n] - j[n] * y[n + 1];
            assert!(close(w, 2.0 / (std::f64::consts::PI * x), 1e-11), "x={x} n={n}");
            let w = i[n] * k[n + 1] + i[n + 1] * k[n];
            assert!(close(w, 1.0 / x, 1e-11), "x={x} n={n}");
        }
    }
}

#[test]
fn order_arrays_at_zero_and_domain() {
    assert_eq!(bessel_j_array(3, 0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(bessel_i_scaled_array(2, 0.0).unwrap(), vec![1.0, 0.0, 0.0]);
    assert!(bessel_y_array(2, 0.0).is_err());
    assert!(bessel_k_scaled_array(2, -1.0).is_err());
    assert!(bessel_j_array(2, f64::NAN).is_err());
}
